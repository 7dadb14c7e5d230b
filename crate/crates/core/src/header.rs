//! Field layouts, header values, bit masks and masked keys.
//!
//! A [`Layout`] is an ordered list of named fields. Every header is packed
//! into a single `u128` with the first field in the most significant bits and
//! each field stored MSB-first, so bit index 0 of a field is its top bit.
//! Values carry a layout tag so that mixing layouts is caught at runtime.

use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

/// Largest total header width a layout may describe.
pub const MAX_BITS: u32 = 128;
/// Largest width of a single field.
pub const MAX_FIELD_BITS: u32 = 64;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum HeaderError {
    #[error("layout mismatch")]
    LayoutMismatch,
    #[error("field `{0}` has invalid width {1}")]
    InvalidWidth(String, u32),
    #[error("layout is {0} bits wide, at most {MAX_BITS} supported")]
    TooWide(u32),
    #[error("duplicate field name `{0}`")]
    DuplicateField(String),
    #[error("expected {expected} field values, got {got}")]
    FieldCount { expected: usize, got: usize },
    #[error("value {value} does not fit in {width}-bit field `{field}`")]
    ValueTooWide {
        field: String,
        value: u64,
        width: u32,
    },
    #[error("prefix length {len} exceeds field width {width}")]
    PrefixTooLong { len: u32, width: u32 },
    #[error("unknown field `{0}`")]
    UnknownField(String),
    #[error("key has bits set outside its mask")]
    KeyOutsideMask,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FieldSpec {
    pub name: String,
    pub width: u32,
}

impl FieldSpec {
    pub fn new(name: impl Into<String>, width: u32) -> Self {
        FieldSpec {
            name: name.into(),
            width,
        }
    }
}

/// Identifies the layout a packed value was built for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LayoutTag(u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    fields: Vec<FieldSpec>,
    shifts: Vec<u32>,
    total_bits: u32,
    tag: LayoutTag,
}

pub const IP_SRC: usize = 0;
pub const IP_DST: usize = 1;
pub const PROTO: usize = 2;
pub const SPORT: usize = 3;
pub const DPORT: usize = 4;

impl Layout {
    pub fn new(fields: Vec<FieldSpec>) -> Result<Self, HeaderError> {
        let mut total = 0u32;
        for (i, f) in fields.iter().enumerate() {
            if f.width == 0 || f.width > MAX_FIELD_BITS {
                return Err(HeaderError::InvalidWidth(f.name.clone(), f.width));
            }
            if fields[..i].iter().any(|g| g.name == f.name) {
                return Err(HeaderError::DuplicateField(f.name.clone()));
            }
            total += f.width;
        }
        if total > MAX_BITS {
            return Err(HeaderError::TooWide(total));
        }
        let mut shifts = Vec::with_capacity(fields.len());
        let mut used = 0;
        for f in &fields {
            used += f.width;
            shifts.push(total - used);
        }
        // FNV-1a over names and widths.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for f in &fields {
            for b in f.name.bytes().chain(f.width.to_be_bytes()) {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        Ok(Layout {
            fields,
            shifts,
            total_bits: total,
            tag: LayoutTag(h),
        })
    }

    /// `ip_src`, `ip_dst`, `proto`, `sport`, `dport`.
    pub fn five_tuple() -> Self {
        Layout::new(vec![
            FieldSpec::new("ip_src", 32),
            FieldSpec::new("ip_dst", 32),
            FieldSpec::new("proto", 8),
            FieldSpec::new("sport", 16),
            FieldSpec::new("dport", 16),
        ])
        .expect("five-tuple layout is valid")
    }

    /// Single 3-bit field named `HYP`.
    pub fn hyp() -> Self {
        Layout::new(vec![FieldSpec::new("HYP", 3)]).expect("HYP layout is valid")
    }

    pub fn fields(&self) -> &[FieldSpec] {
        &self.fields
    }

    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }

    pub fn total_bits(&self) -> u32 {
        self.total_bits
    }

    pub fn tag(&self) -> LayoutTag {
        self.tag
    }

    pub fn width(&self, field: usize) -> u32 {
        self.fields[field].width
    }

    pub fn field_index(&self, name: &str) -> Option<usize> {
        self.fields.iter().position(|f| f.name == name)
    }

    /// All-ones value for one field.
    pub fn field_full(&self, field: usize) -> u64 {
        low_ones(self.fields[field].width)
    }

    /// The bits of `field` in packed position.
    pub(crate) fn field_bits(&self, field: usize) -> u128 {
        (self.field_full(field) as u128) << self.shifts[field]
    }

    pub(crate) fn place(&self, field: usize, value: u64) -> u128 {
        (value as u128) << self.shifts[field]
    }

    pub(crate) fn extract(&self, bits: u128, field: usize) -> u64 {
        ((bits >> self.shifts[field]) as u64) & self.field_full(field)
    }

    fn pack(&self, values: &[u64]) -> Result<u128, HeaderError> {
        if values.len() != self.fields.len() {
            return Err(HeaderError::FieldCount {
                expected: self.fields.len(),
                got: values.len(),
            });
        }
        let mut bits = 0u128;
        for (i, &v) in values.iter().enumerate() {
            if v > self.field_full(i) {
                return Err(HeaderError::ValueTooWide {
                    field: self.fields[i].name.clone(),
                    value: v,
                    width: self.fields[i].width,
                });
            }
            bits |= self.place(i, v);
        }
        Ok(bits)
    }

    pub fn header(&self, values: &[u64]) -> Result<HeaderValue, HeaderError> {
        Ok(HeaderValue {
            tag: self.tag,
            bits: self.pack(values)?,
        })
    }

    pub fn mask(&self, values: &[u64]) -> Result<HeaderMask, HeaderError> {
        Ok(HeaderMask {
            tag: self.tag,
            bits: self.pack(values)?,
        })
    }

    pub fn zero_mask(&self) -> HeaderMask {
        HeaderMask {
            tag: self.tag,
            bits: 0,
        }
    }

    pub fn full_mask(&self) -> HeaderMask {
        HeaderMask {
            tag: self.tag,
            bits: low_ones_128(self.total_bits),
        }
    }

    pub fn values(&self, h: &HeaderValue) -> Vec<u64> {
        (0..self.len()).map(|i| self.extract(h.bits, i)).collect()
    }

    pub fn mask_values(&self, m: &HeaderMask) -> Vec<u64> {
        (0..self.len()).map(|i| self.extract(m.bits, i)).collect()
    }

    pub fn get(&self, h: &HeaderValue, field: usize) -> u64 {
        self.extract(h.bits, field)
    }

    /// Returns `h` with one field replaced.
    pub fn with_field(
        &self,
        h: &HeaderValue,
        field: usize,
        value: u64,
    ) -> Result<HeaderValue, HeaderError> {
        if h.tag != self.tag {
            return Err(HeaderError::LayoutMismatch);
        }
        if value > self.field_full(field) {
            return Err(HeaderError::ValueTooWide {
                field: self.fields[field].name.clone(),
                value,
                width: self.width(field),
            });
        }
        let bits = (h.bits & !self.field_bits(field)) | self.place(field, value);
        Ok(HeaderValue { tag: h.tag, bits })
    }

    /// Renders a mask as `/`-separated zero-padded hex, one group per field.
    pub fn mask_hex(&self, m: &HeaderMask) -> String {
        (0..self.len())
            .map(|i| {
                let digits = self.width(i).div_ceil(4) as usize;
                format!("{:0digits$x}", self.extract(m.bits, i))
            })
            .collect::<Vec<_>>()
            .join("/")
    }

    /// Renders a field group as binary, used for the narrow HYP layout.
    pub fn bin(&self, bits: u128) -> String {
        format!("{:0w$b}", bits, w = self.total_bits as usize)
    }
}

fn low_ones(width: u32) -> u64 {
    if width >= 64 {
        u64::MAX
    } else {
        (1u64 << width) - 1
    }
}

fn low_ones_128(width: u32) -> u128 {
    if width >= 128 {
        u128::MAX
    } else {
        (1u128 << width) - 1
    }
}

macro_rules! packed {
    ($name:ident) => {
        #[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub struct $name {
            tag: LayoutTag,
            bits: u128,
        }

        impl $name {
            pub fn bits(&self) -> u128 {
                self.bits
            }

            pub fn tag(&self) -> LayoutTag {
                self.tag
            }

            #[allow(dead_code)]
            pub(crate) fn from_raw(tag: LayoutTag, bits: u128) -> Self {
                $name { tag, bits }
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({:#x})", stringify!($name), self.bits)
            }
        }
    };
}

packed!(HeaderValue);
packed!(HeaderMask);
packed!(MaskedKey);

impl HeaderMask {
    pub fn is_zero(&self) -> bool {
        self.bits == 0
    }

    pub fn count_ones(&self) -> u32 {
        self.bits.count_ones()
    }
}

impl MaskedKey {
    /// Reinterprets the key as a header, e.g. to mask it again.
    pub fn as_header(&self) -> HeaderValue {
        HeaderValue {
            tag: self.tag,
            bits: self.bits,
        }
    }
}

pub fn apply_mask(h: &HeaderValue, m: &HeaderMask) -> Result<MaskedKey, HeaderError> {
    if h.tag != m.tag {
        return Err(HeaderError::LayoutMismatch);
    }
    Ok(MaskedKey {
        tag: h.tag,
        bits: h.bits & m.bits,
    })
}

/// Builds a masked key, rejecting keys with bits outside the mask.
pub fn masked_key(key: &HeaderValue, m: &HeaderMask) -> Result<MaskedKey, HeaderError> {
    let k = apply_mask(key, m)?;
    if k.bits != key.bits {
        return Err(HeaderError::KeyOutsideMask);
    }
    Ok(k)
}

/// Index (0 = MSB) of the first bit where `a` and `b` differ within `width`.
pub fn first_diff_bit(a: u64, b: u64, width: u32) -> Option<u32> {
    let x = (a ^ b) & low_ones(width);
    if x == 0 {
        None
    } else {
        Some(x.leading_zeros() - (64 - width))
    }
}

/// Field mask with the `len` most significant of `width` bits set.
pub fn prefix_mask(width: u32, len: u32) -> Result<u64, HeaderError> {
    if len > width {
        return Err(HeaderError::PrefixTooLong { len, width });
    }
    if len == 0 {
        return Ok(0);
    }
    Ok(low_ones(len) << (width - len))
}

pub fn mask_union(a: &HeaderMask, b: &HeaderMask) -> Result<HeaderMask, HeaderError> {
    if a.tag != b.tag {
        return Err(HeaderError::LayoutMismatch);
    }
    Ok(HeaderMask {
        tag: a.tag,
        bits: a.bits | b.bits,
    })
}

/// True iff some header matches both `(k1, m1)` and `(k2, m2)`.
pub fn megaflows_overlap(k1: &MaskedKey, m1: &HeaderMask, k2: &MaskedKey, m2: &HeaderMask) -> bool {
    let common = m1.bits & m2.bits;
    (k1.bits ^ k2.bits) & common == 0
}

/// Parses a field value: dotted quad for 32-bit fields, decimal or `0x` hex.
pub fn parse_field_value(text: &str, width: u32) -> Option<u64> {
    if width == 32 && text.contains('.') {
        return text.parse::<Ipv4Addr>().ok().map(|ip| u32::from(ip) as u64);
    }
    if let Some(hex) = text.strip_prefix("0x") {
        return u64::from_str_radix(hex, 16).ok();
    }
    if let Some(bin) = text.strip_prefix("0b") {
        return u64::from_str_radix(bin, 2).ok();
    }
    text.parse().ok()
}

pub fn ipv4(text: &str) -> u64 {
    u32::from(text.parse::<Ipv4Addr>().expect("valid IPv4 literal")) as u64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hyp(v: u64) -> HeaderValue {
        Layout::hyp().header(&[v]).unwrap()
    }

    fn hmask(v: u64) -> HeaderMask {
        Layout::hyp().mask(&[v]).unwrap()
    }

    #[test]
    fn apply_mask_examples() {
        assert_eq!(
            apply_mask(&hyp(0b001), &hmask(0b111)).unwrap().bits(),
            0b001
        );
        assert_eq!(
            apply_mask(&hyp(0b101), &hmask(0b100)).unwrap().bits(),
            0b100
        );
        assert_eq!(apply_mask(&hyp(0), &hmask(0)).unwrap().bits(), 0);
    }

    #[test]
    fn apply_mask_rejects_other_layout() {
        let five = Layout::five_tuple();
        let m = five.zero_mask();
        assert_eq!(apply_mask(&hyp(1), &m), Err(HeaderError::LayoutMismatch));
    }

    #[test]
    fn first_diff_examples() {
        assert_eq!(first_diff_bit(0b001, 0b001, 3), None);
        assert_eq!(first_diff_bit(0b100, 0b001, 3), Some(0));
        assert_eq!(first_diff_bit(0b010, 0b001, 3), Some(1));
        assert_eq!(first_diff_bit(0, 1, 64), Some(63));
    }

    #[test]
    fn prefix_mask_examples() {
        assert_eq!(prefix_mask(3, 2).unwrap(), 0b110);
        assert_eq!(prefix_mask(3, 0).unwrap(), 0);
        assert_eq!(prefix_mask(16, 16).unwrap(), 0xffff);
        assert_eq!(prefix_mask(64, 64).unwrap(), u64::MAX);
        assert!(prefix_mask(3, 4).is_err());
    }

    #[test]
    fn union_examples() {
        let u = mask_union(&hmask(0b110), &hmask(0b001)).unwrap();
        assert_eq!(u.bits(), 0b111);
        assert!(mask_union(&hmask(0), &hmask(0)).unwrap().is_zero());

        let l = Layout::five_tuple();
        let dp = l.mask(&[0, 0, 0, 0, 0xffff]).unwrap();
        let sp = l.mask(&[0, 0, 0, 0x8000, 0]).unwrap();
        let u = mask_union(&dp, &sp).unwrap();
        assert_eq!(l.mask_values(&u), vec![0, 0, 0, 0x8000, 0xffff]);
    }

    #[test]
    fn overlap_examples() {
        let k = |v| apply_mask(&hyp(v), &hmask(0b111)).unwrap();
        let row1 = (k(0b001), hmask(0b111));
        let row2 = (
            apply_mask(&hyp(0b100), &hmask(0b100)).unwrap(),
            hmask(0b100),
        );
        assert!(!megaflows_overlap(&row1.0, &row1.1, &row2.0, &row2.1));
        assert!(megaflows_overlap(&row1.0, &row1.1, &row1.0, &row1.1));
        let wild = apply_mask(&hyp(0), &hmask(0)).unwrap();
        assert!(megaflows_overlap(&wild, &hmask(0), &row2.0, &row2.1));
        assert!(megaflows_overlap(&wild, &hmask(0), &row1.0, &row1.1));
    }

    #[test]
    fn layout_validation() {
        assert!(Layout::new(vec![FieldSpec::new("a", 0)]).is_err());
        assert!(Layout::new(vec![FieldSpec::new("a", 1), FieldSpec::new("a", 1)]).is_err());
        assert!(Layout::new(vec![FieldSpec::new("a", 64), FieldSpec::new("b", 65)]).is_err());
        let l = Layout::five_tuple();
        assert_eq!(l.total_bits(), 104);
        assert!(l.header(&[0, 0, 256, 0, 0]).is_err());
        let h = l.header(&[ipv4("10.0.0.1"), 2, 6, 1234, 80]).unwrap();
        assert_eq!(l.values(&h), vec![0x0a00_0001, 2, 6, 1234, 80]);
        assert_eq!(
            l.mask_hex(&l.mask(&[0x8000_0000, 0, 0, 0, 0xffff]).unwrap()),
            "80000000/00000000/00/0000/ffff"
        );
    }

    #[test]
    fn parse_values() {
        assert_eq!(parse_field_value("10.0.0.1", 32), Some(0x0a00_0001));
        assert_eq!(parse_field_value("0x50", 16), Some(80));
        assert_eq!(parse_field_value("80", 16), Some(80));
        assert_eq!(parse_field_value("x", 16), None);
    }
}
