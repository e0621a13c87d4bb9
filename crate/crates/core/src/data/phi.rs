use serde::{Deserialize, Serialize};

use super::{Field, ImageRecord};
use crate::error::{Error, Result};

/// 2x2 table of a row field (task) against a column field (attribute).
///
/// `n10` counts row-positive, column-negative records.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Contingency {
    pub n11: u64,
    pub n10: u64,
    pub n01: u64,
    pub n00: u64,
}

impl Contingency {
    pub fn new(n11: u64, n10: u64, n01: u64, n00: u64) -> Self {
        Self { n11, n10, n01, n00 }
    }

    /// Tabulates two fields, skipping records where either is missing.
    pub fn tabulate<'a>(
        records: impl IntoIterator<Item = &'a ImageRecord>,
        row: &Field,
        col: &Field,
    ) -> Self {
        let mut t = Self::default();
        for r in records {
            if let (Some(a), Some(b)) = (r.field(row), r.field(col)) {
                t.add(a, b);
            }
        }
        t
    }

    pub fn add(&mut self, row: bool, col: bool) {
        match (row, col) {
            (true, true) => self.n11 += 1,
            (true, false) => self.n10 += 1,
            (false, true) => self.n01 += 1,
            (false, false) => self.n00 += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.n11 + self.n10 + self.n01 + self.n00
    }

    pub fn row_positive(&self) -> u64 {
        self.n11 + self.n10
    }

    pub fn col_positive(&self) -> u64 {
        self.n11 + self.n01
    }

    pub fn transpose(&self) -> Self {
        Self::new(self.n11, self.n01, self.n10, self.n00)
    }

    /// Phi coefficient, `None` when a marginal is degenerate.
    pub fn phi(&self) -> Option<f64> {
        let r1 = self.n11 + self.n10;
        let r0 = self.n01 + self.n00;
        let c1 = self.n11 + self.n01;
        let c0 = self.n10 + self.n00;
        if r1 == 0 || r0 == 0 || c1 == 0 || c0 == 0 {
            return None;
        }
        let num = self.n11 as f64 * self.n00 as f64 - self.n10 as f64 * self.n01 as f64;
        let den = (r1 as f64 * r0 as f64 * c1 as f64 * c0 as f64).sqrt();
        Some(num / den)
    }
}

/// Phi correlation between a task label and an attribute.
pub fn compute_phi<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    task: &str,
    attribute: &str,
) -> Result<f64> {
    compute_phi_fields(records, &Field::label(task), &Field::attribute(attribute))
}

/// Phi correlation between any two binary fields.
pub fn compute_phi_fields<'a>(
    records: impl IntoIterator<Item = &'a ImageRecord>,
    a: &Field,
    b: &Field,
) -> Result<f64> {
    let table = Contingency::tabulate(records, a, b);
    table.phi().ok_or_else(|| {
        Error::UndefinedCorrelation(format!(
            "{a:?} vs {b:?} has a degenerate marginal ({table:?})"
        ))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::test_util::{record, table_manifest};
    use proptest::prelude::*;

    fn direct_phi(n11: f64, n10: f64, n01: f64, n00: f64) -> f64 {
        (n11 * n00 - n10 * n01) / ((n11 + n10) * (n01 + n00) * (n11 + n01) * (n10 + n00)).sqrt()
    }

    #[test]
    fn independence_gives_zero() {
        let m = table_manifest(25, 25, 25, 25);
        assert_eq!(compute_phi(&m.records, "y", "b").unwrap(), 0.0);
    }

    #[test]
    fn perfect_association_gives_one() {
        let m = table_manifest(50, 0, 0, 50);
        assert_eq!(compute_phi(&m.records, "y", "b").unwrap(), 1.0);
        let m = table_manifest(0, 50, 50, 0);
        assert_eq!(compute_phi(&m.records, "y", "b").unwrap(), -1.0);
    }

    #[test]
    fn matches_direct_formula() {
        let m = table_manifest(40, 10, 10, 40);
        let phi = compute_phi(&m.records, "y", "b").unwrap();
        assert_eq!(phi, direct_phi(40.0, 10.0, 10.0, 40.0));
        assert!((phi - 0.6).abs() < 1e-12);
    }

    #[test]
    fn degenerate_marginal_is_an_error() {
        let m = table_manifest(10, 5, 0, 0);
        let err = compute_phi(&m.records, "y", "b").unwrap_err();
        assert!(err.to_string().contains("undefined correlation"));
    }

    #[test]
    fn missing_values_are_excluded() {
        let mut m = table_manifest(40, 10, 10, 40);
        m.records
            .push(record("x1", "x1", &[("y", None)], &[("b", Some(true))]));
        m.records
            .push(record("x2", "x2", &[("y", Some(true))], &[("b", None)]));
        let phi = compute_phi(&m.records, "y", "b").unwrap();
        assert_eq!(phi, direct_phi(40.0, 10.0, 10.0, 40.0));
    }

    proptest! {
        #[test]
        fn symmetric_and_bounded(n11 in 0u64..60, n10 in 0u64..60, n01 in 0u64..60, n00 in 0u64..60) {
            let m = table_manifest(n11 as usize, n10 as usize, n01 as usize, n00 as usize);
            let ab = compute_phi_fields(&m.records, &Field::label("y"), &Field::attribute("b"));
            let ba = compute_phi_fields(&m.records, &Field::attribute("b"), &Field::label("y"));
            match (ab, ba) {
                (Ok(x), Ok(y)) => {
                    prop_assert_eq!(x, y);
                    prop_assert!((-1.0..=1.0).contains(&x));
                    prop_assert_eq!(x == 1.0, n10 == 0 && n01 == 0);
                    prop_assert_eq!(x == -1.0, n11 == 0 && n00 == 0);
                    prop_assert_eq!(x, direct_phi(n11 as f64, n10 as f64, n01 as f64, n00 as f64));
                }
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false, "asymmetric definedness"),
            }
        }
    }
}
