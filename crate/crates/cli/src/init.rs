//! Initial conditions from short specs or files.

use std::path::Path;

use anyhow::{bail, Context, Result};
use bconf::bridge::DensitySpec;
use bconf::continuum::{io::read_csv, OpinionFunction};

fn nums(s: &str) -> Result<Vec<f64>> {
    s.split(',').map(|t| t.trim().parse::<f64>().with_context(|| format!("bad number `{t}`"))).collect()
}

/// Discrete opinions (and optional weights) from `list:..`, `uniform:a:b`
/// (needs n and seed) or `linear:a:b` (n evenly spaced points).
pub fn discrete(spec: &str, n: Option<usize>, seed: u64) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let parts: Vec<&str> = spec.splitn(2, ':').collect();
    match parts.as_slice() {
        ["list", rest] => Ok((nums(rest)?, None)),
        ["uniform", _] => {
            let d: DensitySpec = spec.parse()?;
            let n = n.context("uniform initial data needs --n")?;
            Ok((d.draw(n, seed), None))
        }
        ["piecewise", _] => {
            let d: DensitySpec = spec.parse()?;
            let n = n.context("piecewise initial data needs --n")?;
            Ok((d.draw(n, seed), None))
        }
        ["linear", rest] => {
            let v = nums(&rest.replace(':', ","))?;
            let n = n.context("linear initial data needs --n")?;
            if v.len() != 2 || n < 2 {
                bail!("linear:A:B needs two numbers and n ≥ 2");
            }
            Ok(((0..n).map(|i| v[0] + (v[1] - v[0]) * i as f64 / (n - 1) as f64).collect(), None))
        }
        _ => bail!("unknown initial condition `{spec}` (expected list:, uniform:, piecewise: or linear:)"),
    }
}

/// One opinion per line, optionally `opinion,weight`; a non-numeric first
/// line is a header.
pub fn discrete_file(path: &Path) -> Result<(Vec<f64>, Option<Vec<f64>>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut x = Vec::new();
    let mut w = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        let parsed: std::result::Result<Vec<f64>, _> = cols.iter().map(|c| c.trim().parse::<f64>()).collect();
        match parsed {
            Ok(v) if v.len() == 1 => x.push(v[0]),
            Ok(v) if v.len() == 2 => {
                x.push(v[0]);
                w.push(v[1]);
            }
            Err(_) if k == 0 => continue,
            _ => bail!("{}:{}: expected `opinion` or `opinion,weight`", path.display(), k + 1),
        }
    }
    if !w.is_empty() && w.len() != x.len() {
        bail!("{}: either every line has a weight or none does", path.display());
    }
    Ok((x, (!w.is_empty()).then_some(w)))
}

/// Continuum data: `linear:a:b`, `const:c`, `step:v1,v2,..:w1,w2,..`,
/// `quantile:<density>` or a CSV file path via `file:PATH`.
pub fn continuum(spec: &str, knots: usize) -> Result<OpinionFunction> {
    let parts: Vec<&str> = spec.split(':').collect();
    let f = match parts.as_slice() {
        ["linear", a, b] => OpinionFunction::linear(a.parse()?, b.parse()?, knots)?,
        ["const", c] => OpinionFunction::constant(c.parse()?, knots)?,
        ["step", v, w] => OpinionFunction::step(&nums(v)?, &nums(w)?)?,
        ["quantile", ..] => spec["quantile:".len()..].parse::<DensitySpec>()?.quantile_function(knots)?,
        ["file", ..] => {
            let p = &spec["file:".len()..];
            read_csv(&std::fs::read_to_string(p).with_context(|| format!("reading {p}"))?)?
        }
        _ => bail!("unknown initial function `{spec}` (expected linear:, const:, step:, quantile: or file:)"),
    };
    Ok(f)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specs() {
        assert_eq!(discrete("list:0,1.5", None, 0).unwrap().0, vec![0.0, 1.5]);
        assert_eq!(discrete("linear:0:2", Some(3), 0).unwrap().0, vec![0.0, 1.0, 2.0]);
        let (a, _) = discrete("uniform:0:10", Some(50), 3).unwrap();
        assert_eq!(a, discrete("uniform:0:10", Some(50), 3).unwrap().0);
        assert!(discrete("uniform:0:10", None, 3).is_err());
        assert!(discrete("gauss:0:1", Some(3), 0).is_err());
        assert_eq!(continuum("const:3", 8).unwrap().values(), &[3.0; 9]);
        assert!(continuum("linear:0:10", 16).unwrap().is_regular());
        assert!(!continuum("step:0,2:1,1", 16).unwrap().is_regular());
    }
}
