//! Classifies every header of the 3-bit toy layout and prints the cache it
//! leaves behind, then the probe count each header now pays.

use tsesim::flow_cache::{CacheConfig, FlowCache};
use tsesim::slowpath::Acl;

fn main() {
    let acl = Acl::hyp();
    let layout = acl.layout().clone();
    print!("rules:\n{}", acl.to_text());
    let mut cache = FlowCache::new(acl, CacheConfig::default());
    println!("header  path       mask  action  new_subtable");
    for h in 0..8 {
        let r = cache.classify(&layout.header(&[h]).unwrap(), 0.0);
        let mask = r
            .mask
            .map_or("-".into(), |m| format!("{:03b}", layout.mask_values(&m)[0]));
        println!(
            "{h:03b}     {:<9}  {mask}   {:<6}  {}",
            format!("{:?}", r.path),
            r.action,
            r.created_subtable
        );
    }
    print!("cache:\n{}", cache.snapshot());
    for h in 0..8 {
        let p = cache.peek(&layout.header(&[h]).unwrap());
        println!("{h:03b} probes {}", p.subtables_probed);
    }
}
