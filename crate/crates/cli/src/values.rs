//! Value lists for grid flags: `0,0.5,2^3` or `2^-10..2^15`.

use anyhow::{bail, Context, Result};

fn power(s: &str) -> Option<Result<i32>> {
    let e = s.trim().strip_prefix("2^")?;
    Some(e.parse().with_context(|| format!("bad exponent in {s:?}")))
}

fn number(s: &str) -> Result<f64> {
    let s = s.trim();
    let v = match power(s) {
        Some(e) => 2f64.powi(e?),
        None => s.parse().with_context(|| format!("cannot parse {s:?} as a number"))?,
    };
    if !v.is_finite() {
        bail!("{s:?} is not finite");
    }
    Ok(v)
}

/// Comma-separated items; an item `2^a..2^b` expands to every power of two
/// in between and `a..b` to the integers in between.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for item in s.split(',') {
        match item.split_once("..") {
            Some((lo, hi)) => match (power(lo), power(hi)) {
                (Some(lo), Some(hi)) => {
                    let (lo, hi) = (lo?, hi?);
                    if lo > hi {
                        bail!("empty range {item:?}");
                    }
                    out.extend((lo..=hi).map(|k| 2f64.powi(k)));
                }
                (None, None) => {
                    let lo: i64 = lo.trim().parse().with_context(|| format!("bad range {item:?}"))?;
                    let hi: i64 = hi.trim().parse().with_context(|| format!("bad range {item:?}"))?;
                    if lo > hi {
                        bail!("empty range {item:?}");
                    }
                    out.extend((lo..=hi).map(|k| k as f64));
                }
                _ => bail!("range {item:?} mixes powers of two and plain numbers"),
            },
            None => out.push(number(item)?),
        }
    }
    Ok(out)
}

pub fn parse_penalties(s: &str) -> Result<Vec<f64>> {
    let v = parse_list(s)?;
    if let Some(p) = v.iter().find(|p| **p < 0.0) {
        bail!("penalty {p} is negative");
    }
    Ok(v)
}

pub fn parse_counts(s: &str) -> Result<Vec<usize>> {
    parse_list(s)?
        .into_iter()
        .map(|v| {
            if v.fract() != 0.0 || v < 1.0 {
                bail!("{v} is not a positive integer");
            }
            Ok(v as usize)
        })
        .collect()
}
