//! Atoms, finite domains and exact rationals.

use std::cmp::Ordering;
use std::collections::HashMap;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{One, Signed, Zero};

/// Exact rational number with arbitrary-precision numerator and denominator.
///
/// `num_rational` keeps values reduced with a positive denominator, so equal
/// values always have equal representations.
pub type Rational = BigRational;

/// A value a node can take: either a symbol or an arbitrary-precision integer.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(BigInt),
    Sym(String),
}

impl Value {
    pub fn int(n: impl Into<BigInt>) -> Self {
        Value::Int(n.into())
    }

    pub fn sym(s: impl Into<String>) -> Self {
        Value::Sym(s.into())
    }

    pub fn as_int(&self) -> Option<&BigInt> {
        match self {
            Value::Int(n) => Some(n),
            Value::Sym(_) => None,
        }
    }

    pub fn as_sym(&self) -> Option<&str> {
        match self {
            Value::Sym(s) => Some(s),
            Value::Int(_) => None,
        }
    }

    /// Integer text (including `b^e`) becomes an integer, anything else a symbol.
    pub fn parse(text: &str) -> Value {
        match parse_int(text) {
            Some(n) => Value::Int(n),
            None => Value::Sym(text.to_string()),
        }
    }

    /// Integer values as rationals, used when summing utility nodes.
    pub fn to_rational(&self) -> Option<Rational> {
        self.as_int().map(|n| Rational::from_integer(n.clone()))
    }

    /// Truthiness for probe tables: non-zero integers and the symbols
    /// `true`/`yes`/`on` count as true.
    pub fn is_truthy(&self) -> bool {
        match self {
            Value::Int(n) => !n.is_zero(),
            Value::Sym(s) => matches!(s.as_str(), "true" | "yes" | "on"),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(n) => write!(f, "{}", format_int(n)),
            Value::Sym(s) => f.write_str(s),
        }
    }
}

/// Values travel as strings: integers in their canonical text form.
impl serde::Serialize for Value {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> serde::Deserialize<'de> for Value {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(serde::Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Int(i64),
            Text(String),
        }
        Ok(match Raw::deserialize(d)? {
            Raw::Int(n) => Value::from(n),
            Raw::Text(t) => Value::parse(&t),
        })
    }
}

impl From<i64> for Value {
    fn from(n: i64) -> Self {
        Value::Int(BigInt::from(n))
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Sym(s.to_string())
    }
}

/// Formats an integer, writing large exact powers of ten as `10^k` so that
/// constants such as `10^10000` stay readable in source files and traces.
pub fn format_int(n: &BigInt) -> String {
    if let Some(k) = power_of_ten(n.abs()) {
        if k >= 7 {
            return if n.is_negative() {
                format!("-10^{k}")
            } else {
                format!("10^{k}")
            };
        }
    }
    n.to_string()
}

fn power_of_ten(mut n: BigInt) -> Option<usize> {
    if n.is_zero() {
        return None;
    }
    let ten = BigInt::from(10);
    let mut k = 0;
    while n > BigInt::one() {
        if !(&n % &ten).is_zero() {
            return None;
        }
        n /= &ten;
        k += 1;
    }
    Some(k)
}

/// Formats a rational as `p/q`, or just `p` when the denominator is one.
pub fn format_rational(r: &Rational) -> String {
    if r.denom().is_one() {
        format_int(r.numer())
    } else {
        format!("{}/{}", format_int(r.numer()), format_int(r.denom()))
    }
}

/// Parses `p`, `p/q`, `b^e` and `p/q` with power operands.
pub fn parse_rational(text: &str) -> Option<Rational> {
    let text = text.trim();
    let (num, den) = match text.split_once('/') {
        Some((n, d)) => (n, Some(d)),
        None => (text, None),
    };
    let n = parse_int(num)?;
    let d = match den {
        Some(d) => parse_int(d)?,
        None => BigInt::one(),
    };
    if d.is_zero() {
        return None;
    }
    Some(Rational::new(n, d))
}

/// Parses a decimal integer or a power `b^e` (optionally negated).
pub fn parse_int(text: &str) -> Option<BigInt> {
    let text = text.trim();
    let (neg, body) = match text.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, text),
    };
    let value = match body.split_once('^') {
        Some((b, e)) => {
            let base: BigInt = b.parse().ok()?;
            let exp: u32 = e.parse().ok()?;
            num_traits::pow(base, exp as usize)
        }
        None => {
            if body.is_empty() || !body.bytes().all(|c| c.is_ascii_digit()) {
                return None;
            }
            body.parse().ok()?
        }
    };
    Some(if neg { -value } else { value })
}

/// Float approximation that saturates instead of failing on huge values.
pub fn approx_f64(r: &Rational) -> f64 {
    use num_traits::ToPrimitive;
    match (r.numer().to_f64(), r.denom().to_f64()) {
        (Some(n), Some(d)) if n.is_finite() && d.is_finite() => n / d,
        _ => {
            // Compare digit counts when either side overflows f64.
            let n_digits = r.numer().abs().to_string().len() as i64;
            let d_digits = r.denom().to_string().len() as i64;
            let sign = if r.is_negative() { -1.0 } else { 1.0 };
            if n_digits - d_digits > 300 {
                sign * f64::INFINITY
            } else if d_digits - n_digits > 300 {
                0.0
            } else {
                let shift = n_digits.min(d_digits) - 1;
                let scale = num_traits::pow(BigInt::from(10), shift.max(0) as usize);
                let n = (r.numer() / &scale).to_f64().unwrap_or(f64::INFINITY);
                let d = (r.denom() / &scale).to_f64().unwrap_or(f64::INFINITY);
                n / d
            }
        }
    }
}

/// A named, ordered, finite set of values. The declared order is canonical and
/// drives every tie-break in the planners.
#[derive(Clone, Debug)]
pub struct Domain {
    name: String,
    values: Vec<Value>,
    index: HashMap<Value, usize>,
}

impl PartialEq for Domain {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && self.values == other.values
    }
}

impl Eq for Domain {}

impl Domain {
    /// Builds a domain. Duplicate values are kept so that validation can
    /// report them; lookups resolve to the first occurrence.
    pub fn new(name: impl Into<String>, values: Vec<Value>) -> Self {
        let mut index = HashMap::with_capacity(values.len());
        for (i, v) in values.iter().enumerate() {
            index.entry(v.clone()).or_insert(i);
        }
        Domain {
            name: name.into(),
            values,
            index,
        }
    }

    pub fn symbols(name: impl Into<String>, syms: &[&str]) -> Self {
        Self::new(name, syms.iter().map(|s| Value::sym(*s)).collect())
    }

    pub fn ints(name: impl Into<String>, ints: impl IntoIterator<Item = i64>) -> Self {
        Self::new(name, ints.into_iter().map(Value::from).collect())
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn values(&self) -> &[Value] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn index_of(&self, v: &Value) -> Option<usize> {
        self.index.get(v).copied()
    }

    pub fn contains(&self, v: &Value) -> bool {
        self.index.contains_key(v)
    }

    pub fn value(&self, i: usize) -> &Value {
        &self.values[i]
    }

    pub fn has_duplicates(&self) -> bool {
        self.index.len() != self.values.len()
    }

    pub fn is_numeric(&self) -> bool {
        self.values.iter().all(|v| matches!(v, Value::Int(_)))
    }

    pub fn renamed(&self, name: impl Into<String>) -> Domain {
        Domain::new(name, self.values.clone())
    }
}

/// Iterates the cartesian product of domain sizes in canonical (odometer)
/// order: the first position is the most significant.
pub struct TupleIter {
    cards: Vec<usize>,
    next: Option<Vec<usize>>,
}

impl TupleIter {
    pub fn new(cards: Vec<usize>) -> Self {
        let next = if cards.iter().any(|&c| c == 0) {
            None
        } else {
            Some(vec![0; cards.len()])
        };
        TupleIter { cards, next }
    }
}

impl Iterator for TupleIter {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let current = self.next.take()?;
        let mut succ = current.clone();
        let mut pos = succ.len();
        loop {
            if pos == 0 {
                break;
            }
            pos -= 1;
            succ[pos] += 1;
            if succ[pos] < self.cards[pos] {
                self.next = Some(succ);
                break;
            }
            succ[pos] = 0;
        }
        Some(current)
    }
}

/// All value tuples of the given domains in canonical order.
pub fn value_tuples<'a>(domains: &'a [&'a Domain]) -> impl Iterator<Item = Vec<Value>> + 'a {
    TupleIter::new(domains.iter().map(|d| d.len()).collect())
        .map(move |ix| ix.iter().zip(domains).map(|(&i, d)| d.value(i).clone()).collect())
}

/// Index of a tuple of value indices under mixed radix (first most significant).
pub fn tuple_rank(ix: &[usize], cards: &[usize]) -> usize {
    ix.iter().zip(cards).fold(0, |acc, (&i, &c)| acc * c + i)
}

/// Orders identifiers so that numeric suffixes compare numerically
/// (`S_2` before `S_10`).
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    let mut ai = a.chars().peekable();
    let mut bi = b.chars().peekable();
    loop {
        match (ai.peek().copied(), bi.peek().copied()) {
            (None, None) => return Ordering::Equal,
            (None, Some(_)) => return Ordering::Less,
            (Some(_), None) => return Ordering::Greater,
            (Some(x), Some(y)) if x.is_ascii_digit() && y.is_ascii_digit() => {
                let mut na = String::new();
                while let Some(c) = ai.peek().copied().filter(char::is_ascii_digit) {
                    na.push(c);
                    ai.next();
                }
                let mut nb = String::new();
                while let Some(c) = bi.peek().copied().filter(char::is_ascii_digit) {
                    nb.push(c);
                    bi.next();
                }
                let na_t = na.trim_start_matches('0');
                let nb_t = nb.trim_start_matches('0');
                let ord = na_t
                    .len()
                    .cmp(&nb_t.len())
                    .then_with(|| na_t.cmp(nb_t))
                    .then_with(|| na.len().cmp(&nb.len()));
                if ord != Ordering::Equal {
                    return ord;
                }
            }
            (Some(x), Some(y)) => {
                if x != y {
                    return x.cmp(&y);
                }
                ai.next();
                bi.next();
            }
        }
    }
}

/// Splits `R_12` into `("R", Some(12))`; ids without a numeric suffix return
/// `None` as index.
pub fn split_index(id: &str) -> (&str, Option<i64>) {
    if let Some(pos) = id.rfind('_') {
        let (stem, rest) = id.split_at(pos);
        let digits = &rest[1..];
        if !digits.is_empty() && !stem.is_empty() && digits.bytes().all(|c| c.is_ascii_digit()) {
            if let Ok(n) = digits.parse() {
                return (stem, Some(n));
            }
        }
    }
    (id, None)
}

pub fn rat(n: i64, d: i64) -> Rational {
    Rational::new(BigInt::from(n), BigInt::from(d))
}

pub fn rat_int(n: impl Into<BigInt>) -> Rational {
    Rational::from_integer(n.into())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rational_text_forms() {
        assert_eq!(parse_rational("1/6"), Some(rat(1, 6)));
        assert_eq!(parse_rational("-3"), Some(rat(-3, 1)));
        assert_eq!(parse_rational("2/4"), Some(rat(1, 2)));
        assert_eq!(parse_rational("1/0"), None);
        assert_eq!(parse_rational("x"), None);
        let huge = parse_rational("10^10000").unwrap();
        assert_eq!(format_rational(&huge), "10^10000");
        assert_eq!(format_rational(&rat(9, 10)), "9/10");
        assert_eq!(format_rational(&rat_int(1_000_000)), "1000000");
        assert_eq!(format_rational(&rat_int(10_000_000)), "10^7");
    }

    #[test]
    fn tuples_are_odometer_ordered() {
        let all: Vec<_> = TupleIter::new(vec![2, 3]).collect();
        assert_eq!(all.len(), 6);
        assert_eq!(all[0], vec![0, 0]);
        assert_eq!(all[1], vec![0, 1]);
        assert_eq!(all[5], vec![1, 2]);
        for (i, t) in all.iter().enumerate() {
            assert_eq!(tuple_rank(t, &[2, 3]), i);
        }
        assert_eq!(TupleIter::new(vec![]).count(), 1);
        assert_eq!(TupleIter::new(vec![2, 0]).count(), 0);
    }

    #[test]
    fn natural_order_and_index_suffix() {
        assert_eq!(natural_cmp("S_2", "S_10"), Ordering::Less);
        assert_eq!(natural_cmp("A_0", "S_0"), Ordering::Less);
        assert_eq!(natural_cmp("X", "Y"), Ordering::Less);
        assert_eq!(split_index("R_12"), ("R", Some(12)));
        assert_eq!(split_index("Ab_0"), ("Ab", Some(0)));
        assert_eq!(split_index("S"), ("S", None));
        assert_eq!(split_index("S_c"), ("S_c", None));
    }

    #[test]
    fn huge_values_approximate_without_panicking() {
        let huge = parse_rational("10^10000").unwrap();
        assert!(approx_f64(&huge).is_infinite());
        assert!((approx_f64(&rat(1, 3)) - 1.0 / 3.0).abs() < 1e-15);
    }
}
