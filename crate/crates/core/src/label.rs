//! Natural ordering for slot labels, so that "S2" sorts before "S10".

use std::cmp::Ordering;

#[derive(Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Chunk<'a> {
    Number(u128, &'a str),
    Text(&'a str),
}

fn chunks(label: &str) -> Vec<Chunk<'_>> {
    let mut out = Vec::new();
    let bytes = label.as_bytes();
    let mut start = 0;
    while start < bytes.len() {
        let digit = bytes[start].is_ascii_digit();
        let mut end = start;
        while end < bytes.len() && bytes[end].is_ascii_digit() == digit {
            end += 1;
        }
        let part = &label[start..end];
        out.push(match part.parse::<u128>() {
            Ok(n) if digit => Chunk::Number(n, part),
            _ => Chunk::Text(part),
        });
        start = end;
    }
    out
}

/// Compares labels chunk by chunk, numeric runs by value.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    chunks(a).cmp(&chunks(b)).then_with(|| a.cmp(b))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numeric_runs_compare_by_value() {
        let mut labels = vec!["S10", "S2", "S1", "A3", "S02"];
        labels.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(labels, ["A3", "S1", "S02", "S2", "S10"]);
    }

    #[test]
    fn total_order_on_equal_values() {
        assert_eq!(natural_cmp("S1", "S1"), Ordering::Equal);
        assert_ne!(natural_cmp("S01", "S1"), Ordering::Equal);
    }
}
