//! Priority flow table and megaflow synthesis.
//!
//! The slow path is an order-dependent list of exact-or-wildcard rules.
//! [`Acl::synthesize`] walks it and returns the widest (key, mask) entry that
//! covers the probing header and keeps the decision of every covered header.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::header::{
    apply_mask, first_diff_bit, parse_field_value, prefix_mask, HeaderError, HeaderMask,
    HeaderValue, Layout, MaskedKey,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Action {
    Allow,
    Deny,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Allow => "allow",
            Action::Deny => "deny",
        })
    }
}

impl FromStr for Action {
    type Err = AclError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "allow" => Ok(Action::Allow),
            "deny" | "drop" => Ok(Action::Deny),
            other => Err(AclError::BadAction(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowRule {
    pub priority: i64,
    /// `(field index, exact value)`; unlisted fields are wildcards.
    pub constraints: Vec<(usize, u64)>,
    pub action: Action,
}

impl FlowRule {
    pub fn new(priority: i64, mut constraints: Vec<(usize, u64)>, action: Action) -> Self {
        constraints.sort_by_key(|c| c.0);
        FlowRule {
            priority,
            constraints,
            action,
        }
    }

    pub fn catch_all(priority: i64, action: Action) -> Self {
        FlowRule::new(priority, Vec::new(), action)
    }

    pub fn is_catch_all(&self) -> bool {
        self.constraints.is_empty()
    }

    pub fn matches(&self, layout: &Layout, h: &HeaderValue) -> bool {
        self.constraints.iter().all(|&(f, v)| layout.get(h, f) == v)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoCatchAll,
    CatchAllNotLast,
    DuplicatePriority(i64),
    ValueExceedsWidth {
        priority: i64,
        field: String,
        value: u64,
    },
    UnknownField {
        priority: i64,
        field: usize,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoCatchAll => f.write_str("no catch-all"),
            Violation::CatchAllNotLast => f.write_str("catch-all deny is not the last rule"),
            Violation::DuplicatePriority(p) => write!(f, "duplicate priority {p}"),
            Violation::ValueExceedsWidth {
                priority,
                field,
                value,
            } => write!(
                f,
                "value exceeds field width: rule {priority} {field}={value}"
            ),
            Violation::UnknownField { priority, field } => {
                write!(f, "rule {priority} uses unknown field #{field}")
            }
        }
    }
}

#[derive(Debug, Error)]
pub enum AclError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("unknown action `{0}`")]
    BadAction(String),
    #[error("invalid ACL: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Invalid(Vec<Violation>),
    #[error(transparent)]
    Header(#[from] HeaderError),
}

/// The result of one slow-path walk, ready to be cached.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Megaflow {
    pub key: MaskedKey,
    pub mask: HeaderMask,
    pub action: Action,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Acl {
    layout: Layout,
    rules: Vec<FlowRule>,
}

impl Acl {
    /// Builds an ACL; rules are ordered by descending priority.
    /// The rule set is not validated, see [`Acl::validate`].
    pub fn new(layout: Layout, mut rules: Vec<FlowRule>) -> Self {
        rules.sort_by(|a, b| b.priority.cmp(&a.priority));
        Acl { layout, rules }
    }

    /// Builds and validates.
    pub fn checked(layout: Layout, rules: Vec<FlowRule>) -> Result<Self, AclError> {
        let acl = Acl::new(layout, rules);
        acl.validate().map_err(AclError::Invalid)?;
        Ok(acl)
    }

    /// `*,*,80 allow`; `10.0.0.1,*,* allow`; `*,12345,* allow`; `* deny`
    /// over `ip_src`, `sport`, `dport`.
    pub fn simple_tse() -> Self {
        use crate::header::{ipv4, DPORT, IP_SRC, SPORT};
        Acl::new(
            Layout::five_tuple(),
            vec![
                FlowRule::new(400, vec![(DPORT, 80)], Action::Allow),
                FlowRule::new(300, vec![(IP_SRC, ipv4("10.0.0.1"))], Action::Allow),
                FlowRule::new(200, vec![(SPORT, 12345)], Action::Allow),
                FlowRule::catch_all(0, Action::Deny),
            ],
        )
    }

    /// `001 allow`, `* deny` on the 3-bit HYP layout.
    pub fn hyp() -> Self {
        Acl::new(
            Layout::hyp(),
            vec![
                FlowRule::new(2, vec![(0, 0b001)], Action::Allow),
                FlowRule::catch_all(1, Action::Deny),
            ],
        )
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn rules(&self) -> &[FlowRule] {
        &self.rules
    }

    /// Keeps only the rules satisfying `keep` plus every catch-all.
    pub fn restrict(&self, mut keep: impl FnMut(&FlowRule) -> bool) -> Acl {
        Acl {
            layout: self.layout.clone(),
            rules: self
                .rules
                .iter()
                .filter(|r| r.is_catch_all() || keep(r))
                .cloned()
                .collect(),
        }
    }

    pub fn validate(&self) -> Result<(), Vec<Violation>> {
        let mut out = Vec::new();
        match self.rules.last() {
            Some(r) if r.is_catch_all() && r.action == Action::Deny => {}
            _ if self.rules.iter().any(|r| r.is_catch_all()) => {
                out.push(Violation::CatchAllNotLast)
            }
            _ => out.push(Violation::NoCatchAll),
        }
        for w in self.rules.windows(2) {
            if w[0].priority == w[1].priority
                && !out.contains(&Violation::DuplicatePriority(w[0].priority))
            {
                out.push(Violation::DuplicatePriority(w[0].priority));
            }
        }
        for r in &self.rules {
            for &(f, v) in &r.constraints {
                if f >= self.layout.len() {
                    out.push(Violation::UnknownField {
                        priority: r.priority,
                        field: f,
                    });
                } else if v > self.layout.field_full(f) {
                    out.push(Violation::ValueExceedsWidth {
                        priority: r.priority,
                        field: self.layout.fields()[f].name.clone(),
                        value: v,
                    });
                }
            }
        }
        if out.is_empty() {
            Ok(())
        } else {
            Err(out)
        }
    }

    /// Highest-priority matching rule. Panics only if the ACL has no
    /// catch-all and nothing matches.
    pub fn lookup(&self, h: &HeaderValue) -> &FlowRule {
        self.rules
            .iter()
            .find(|r| r.matches(&self.layout, h))
            .expect("validated ACL ends with a catch-all")
    }

    /// Walks rules by priority, un-wildcarding the bits each comparison
    /// needed, and stops at the first rule that fully matches.
    pub fn synthesize(&self, h: &HeaderValue) -> Megaflow {
        let layout = &self.layout;
        let mut mask = 0u128;
        for rule in &self.rules {
            let mut matched = true;
            for &(f, want) in &rule.constraints {
                let width = layout.width(f);
                let got = layout.get(h, f);
                match first_diff_bit(got, want, width) {
                    None => mask |= layout.field_bits(f),
                    Some(bit) => {
                        let prefix = prefix_mask(width, bit + 1).expect("bit < width");
                        mask |= layout.place(f, prefix);
                        matched = false;
                        break;
                    }
                }
            }
            if matched {
                let mask = HeaderMask::from_raw(layout.tag(), mask);
                return Megaflow {
                    key: apply_mask(h, &mask).expect("same layout"),
                    mask,
                    action: rule.action,
                };
            }
        }
        // Unreachable for a validated ACL; an uncovered header is dropped.
        let mask = HeaderMask::from_raw(layout.tag(), mask);
        Megaflow {
            key: apply_mask(h, &mask).expect("same layout"),
            mask,
            action: Action::Deny,
        }
    }

    /// Parses `priority=<int> [field=<value>]* action=<allow|deny>` lines.
    /// Blank lines and `#` comments are skipped.
    pub fn parse(layout: Layout, text: &str) -> Result<Acl, AclError> {
        let mut rules = Vec::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| AclError::Parse { line: n + 1, msg };
            let mut priority = None;
            let mut action = None;
            let mut constraints = Vec::new();
            for tok in line.split_whitespace() {
                let (k, v) = tok
                    .split_once('=')
                    .ok_or_else(|| err(format!("expected key=value, got `{tok}`")))?;
                match k {
                    "priority" => {
                        priority = Some(
                            v.parse::<i64>()
                                .map_err(|_| err(format!("bad priority `{v}`")))?,
                        )
                    }
                    "action" => action = Some(v.parse::<Action>().map_err(|e| err(e.to_string()))?),
                    name => {
                        let name = field_alias(name);
                        let f = layout
                            .field_index(name)
                            .ok_or_else(|| err(format!("unknown field `{name}`")))?;
                        if v == "*" {
                            continue;
                        }
                        let value = parse_field_value(v, layout.width(f))
                            .ok_or_else(|| err(format!("bad value `{v}` for `{name}`")))?;
                        constraints.push((f, value));
                    }
                }
            }
            let priority = priority.ok_or_else(|| err("missing priority".into()))?;
            let action = action.ok_or_else(|| err("missing action".into()))?;
            rules.push(FlowRule::new(priority, constraints, action));
        }
        Ok(Acl::new(layout, rules))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for r in &self.rules {
            out.push_str(&format!("priority={}", r.priority));
            for &(f, v) in &r.constraints {
                let spec = &self.layout.fields()[f];
                if spec.width == 32 && spec.name.starts_with("ip") {
                    out.push_str(&format!(
                        " {}={}",
                        spec.name,
                        std::net::Ipv4Addr::from(v as u32)
                    ));
                } else {
                    out.push_str(&format!(" {}={}", spec.name, v));
                }
            }
            out.push_str(&format!(" action={}\n", r.action));
        }
        out
    }
}

fn field_alias(name: &str) -> &str {
    match name {
        "tcp_src" | "tp_src" => "sport",
        "tcp_dst" | "tp_dst" => "dport",
        "nw_src" => "ip_src",
        "nw_dst" => "ip_dst",
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::header::{ipv4, DPORT, SPORT};

    fn hyp(v: u64) -> HeaderValue {
        Layout::hyp().header(&[v]).unwrap()
    }

    #[test]
    fn simple_acl_is_valid() {
        assert_eq!(Acl::simple_tse().validate(), Ok(()));
        assert_eq!(Acl::hyp().validate(), Ok(()));
    }

    #[test]
    fn missing_catch_all() {
        let acl = Acl::simple_tse().restrict(|_| true);
        let no_catch = Acl::new(
            acl.layout().clone(),
            acl.rules()
                .iter()
                .filter(|r| !r.is_catch_all())
                .cloned()
                .collect(),
        );
        let v = no_catch.validate().unwrap_err();
        assert_eq!(v, vec![Violation::NoCatchAll]);
        assert_eq!(v[0].to_string(), "no catch-all");
    }

    #[test]
    fn out_of_width_value() {
        let acl = Acl::new(
            Layout::five_tuple(),
            vec![
                FlowRule::new(5, vec![(DPORT, 70000)], Action::Allow),
                FlowRule::catch_all(0, Action::Deny),
            ],
        );
        let v = acl.validate().unwrap_err();
        assert!(v[0].to_string().starts_with("value exceeds field width"));
    }

    #[test]
    fn duplicate_priority() {
        let acl = Acl::new(
            Layout::hyp(),
            vec![
                FlowRule::new(1, vec![(0, 1)], Action::Allow),
                FlowRule::new(1, vec![(0, 2)], Action::Allow),
                FlowRule::catch_all(0, Action::Deny),
            ],
        );
        assert_eq!(acl.validate(), Err(vec![Violation::DuplicatePriority(1)]));
    }

    #[test]
    fn lookup_examples() {
        let acl = Acl::hyp();
        assert_eq!(acl.lookup(&hyp(0b001)).action, Action::Allow);
        assert_eq!(acl.lookup(&hyp(0b100)).action, Action::Deny);

        let acl = Acl::simple_tse();
        let l = acl.layout();
        for sport in [0, 1234, 12345, 65535] {
            let h = l.header(&[ipv4("192.0.2.1"), 0, 6, sport, 80]).unwrap();
            assert_eq!(acl.lookup(&h).priority, 400);
        }
    }

    #[test]
    fn hyp_table_rows() {
        let acl = Acl::hyp();
        let rows = [
            (0b001, 0b001, 0b111, Action::Allow),
            (0b100, 0b100, 0b100, Action::Deny),
            (0b010, 0b010, 0b110, Action::Deny),
            (0b000, 0b000, 0b111, Action::Deny),
        ];
        for (h, key, mask, action) in rows {
            let mf = acl.synthesize(&hyp(h));
            assert_eq!(
                (mf.key.bits(), mf.mask.bits(), mf.action),
                (key, mask, action)
            );
        }
    }

    #[test]
    fn five_tuple_synthesis() {
        let acl = Acl::simple_tse();
        let l = acl.layout();
        // dport differs from 80 in bit 9, ip_src differs from 10.0.0.1 in bit 0,
        // sport differs from 12345 in bit 2.
        let h = l
            .header(&[ipv4("192.0.2.1"), 7, 6, 12345 ^ 0x2000, 80 ^ 0x40])
            .unwrap();
        let mf = acl.synthesize(&h);
        assert_eq!(
            l.mask_values(&mf.mask),
            vec![0x8000_0000, 0, 0, 0xe000, 0xffc0]
        );
        assert_eq!(mf.action, Action::Deny);
        let h = l.header(&[ipv4("192.0.2.1"), 7, 6, 12345, 81]).unwrap();
        let mf = acl.synthesize(&h);
        assert_eq!(
            l.mask_values(&mf.mask),
            vec![0x8000_0000, 0, 0, 0xffff, 0xffff]
        );
        assert_eq!(mf.action, Action::Allow);
        let _ = SPORT;
    }

    #[test]
    fn parse_round_trip() {
        let text = "\
# simple whitelist
priority=400 dport=80 action=allow
priority=300 ip_src=10.0.0.1 action=allow
priority=200 tcp_src=12345 action=allow
priority=0 action=deny
";
        let acl = Acl::parse(Layout::five_tuple(), text).unwrap();
        assert_eq!(acl, Acl::simple_tse());
        let again = Acl::parse(Layout::five_tuple(), &acl.to_text()).unwrap();
        assert_eq!(again, acl);
    }

    #[test]
    fn parse_errors() {
        let l = Layout::five_tuple();
        assert!(Acl::parse(l.clone(), "priority=1 action=maybe").is_err());
        assert!(Acl::parse(l.clone(), "priority=x action=allow").is_err());
        assert!(Acl::parse(l.clone(), "priority=1 vlan=3 action=allow").is_err());
        assert!(Acl::parse(l.clone(), "action=allow").is_err());
        let acl = Acl::parse(
            l,
            "priority=1 dport=70000 action=allow\npriority=0 action=deny",
        )
        .unwrap();
        assert!(acl.validate().is_err());
    }
}
