//! Parses a text ACL, checks it, and shows the megaflow each sample packet
//! installs along with the stage it was classified in.

use tsesim::flow_cache::{CacheConfig, FlowCache};
use tsesim::header::{ipv4, Layout};
use tsesim::slowpath::Acl;

const RULES: &str = "
# web and dns to one server, everything else dropped
priority=30 ip_dst=10.0.0.2 dport=443 action=allow
priority=20 ip_dst=10.0.0.2 proto=17 dport=53 action=allow
priority=0 action=drop
";

fn main() {
    let acl = Acl::parse(Layout::five_tuple(), RULES).unwrap();
    if let Err(v) = acl.validate() {
        for e in v {
            eprintln!("invalid: {e}");
        }
        std::process::exit(1);
    }
    let layout = acl.layout().clone();
    let mut cache = FlowCache::new(acl, CacheConfig::default());
    let packets = [
        [ipv4("192.0.2.7"), ipv4("10.0.0.2"), 6, 40000, 443],
        [ipv4("192.0.2.8"), ipv4("10.0.0.2"), 6, 40001, 443],
        [ipv4("192.0.2.7"), ipv4("10.0.0.2"), 17, 5353, 53],
        [ipv4("192.0.2.7"), ipv4("10.0.0.3"), 6, 40000, 443],
        [ipv4("192.0.2.7"), ipv4("10.0.0.2"), 6, 40000, 80],
    ];
    for (i, v) in packets.iter().enumerate() {
        let r = cache.classify(&layout.header(v).unwrap(), i as f64);
        let mask = r.mask.map_or("-".into(), |m| layout.mask_hex(&m));
        println!(
            "{:?} {} probed={} mask={mask}",
            r.path, r.action, r.subtables_probed
        );
    }
    print!("{}", cache.snapshot());
}
