//! Sweeps and maximization of the (h, s)-indexed bound families.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::bounds::{
    bound_avg_conditional, bound_avg_theta, bound_global, bound_ww, BoundResult, Flavor, Status,
};
use crate::error::{Error, Result};
use crate::format::{fmt_opt, fmt_sig};
use crate::integrate::IntegrationConfig;
use crate::model::{ScalarModel, Space};
use crate::testfn::{PsiFamily, PsiSpec};

/// Seed grid points per coordinate.
pub const SEED_POINTS: usize = 9;
/// Refinement stops once both brackets are this narrow relative to their range.
pub const REL_WIDTH: f64 = 1e-4;
/// Evaluation budget, seed grid included.
pub const MAX_EVALUATIONS: usize = 200;

/// One evaluated grid point. `status` is a [`Status`] name, or the kind of
/// error that prevented evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub h: f64,
    pub s: f64,
    pub flavor: Flavor,
    pub value: Option<f64>,
    pub numerator: f64,
    pub denominator: f64,
    pub status: String,
}

impl SweepRow {
    fn from_outcome(h: f64, s: f64, flavor: Flavor, outcome: Result<BoundResult>) -> Self {
        match outcome {
            Ok(r) => SweepRow {
                h,
                s,
                flavor,
                value: r.value,
                numerator: r.numerator,
                denominator: r.denominator,
                status: r.status.as_str().to_string(),
            },
            Err(e) => SweepRow {
                h,
                s,
                flavor,
                value: None,
                numerator: f64::NAN,
                denominator: f64::NAN,
                status: error_status(&e).to_string(),
            },
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == Status::Ok.as_str()
    }
}

/// Status label for a failed evaluation.
pub fn error_status(e: &Error) -> &'static str {
    match e {
        Error::InvalidSpec(_) | Error::InvalidInput(_) => "invalid_input",
        Error::Domain(_) => "domain_error",
        Error::NonFinite(_) => "non_finite",
        Error::ZeroEvidence { .. } => "zero_evidence",
        Error::UnsupportedSampling => "unsupported",
        Error::ConditionViolated { .. } => "condition_violated",
        Error::NonRegular(_) => "non_regular",
        Error::NotSpd(_) | Error::NotSymmetric(_) => "invalid_matrix",
        Error::AllDegenerate => "all_degenerate",
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub model_digest: String,
    pub cfg_digest: String,
}

impl SweepTable {
    pub const CSV_HEADER: &'static str = "h,s,flavor,value,numerator,denominator,status";

    pub fn to_csv(&self, digits: usize) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                fmt_sig(r.h, digits),
                fmt_sig(r.s, digits),
                r.flavor.as_str(),
                fmt_opt(r.value, digits),
                fmt_sig(r.numerator, digits),
                fmt_sig(r.denominator, digits),
                r.status
            ));
        }
        out
    }

    /// Parses rows written by [`SweepTable::to_csv`]. Digests are not part of the CSV.
    pub fn rows_from_csv(text: &str) -> Result<Vec<SweepRow>> {
        let bad = |line: usize, why: &str| Error::InvalidInput(format!("sweep csv line {line}: {why}"));
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, h)) if h == Self::CSV_HEADER => {}
            _ => return Err(bad(1, "unexpected header")),
        }
        let num = |i: usize, f: &str| f.parse::<f64>().map_err(|_| bad(i + 1, "bad number"));
        lines
            .map(|(i, line)| {
                let f: Vec<&str> = line.split(',').collect();
                if f.len() != 7 {
                    return Err(bad(i + 1, "expected 7 fields"));
                }
                Ok(SweepRow {
                    h: num(i, f[0])?,
                    s: num(i, f[1])?,
                    flavor: f[2].parse()?,
                    value: match f[3] {
                        "" => None,
                        v => Some(num(i, v)?),
                    },
                    numerator: num(i, f[4])?,
                    denominator: num(i, f[5])?,
                    status: f[6].to_string(),
                })
            })
            .collect()
    }
}

/// Hex SHA-256 of the JSON form of `value`.
pub fn digest<T: Serialize>(value: &T) -> String {
    let json = serde_json::to_vec(value).expect("serializable");
    hex::encode(Sha256::digest(json))
}

/// The bound of `flavor` for the psi of `family` at (h, s).
pub fn evaluate(
    model: &ScalarModel,
    family: PsiFamily,
    flavor: Flavor,
    h: f64,
    s: f64,
    cfg: &IntegrationConfig,
) -> Result<BoundResult> {
    let spec = match family {
        PsiFamily::Ww => PsiSpec::ww(h, s)?,
        PsiFamily::Cond => PsiSpec::cond(h, s)?,
        other => {
            return Err(Error::InvalidInput(format!(
                "family {} has no (h, s) index",
                other.as_str()
            )))
        }
    };
    match flavor {
        Flavor::Global => bound_global(model, &spec, cfg),
        Flavor::AvgConditional => bound_avg_conditional(model, &spec, cfg),
        Flavor::AvgTheta => bound_avg_theta(model, &spec, cfg),
        Flavor::Ww if family == PsiFamily::Ww => bound_ww(model, h, s, cfg),
        other => Err(Error::InvalidInput(format!(
            "flavor {} cannot be swept for family {}",
            other.as_str(),
            family.as_str()
        ))),
    }
}

fn check_sweep_inputs(family: PsiFamily, flavor: Flavor, h_grid: &[f64], s_grid: &[f64]) -> Result<()> {
    if h_grid.is_empty() || s_grid.is_empty() {
        return Err(Error::InvalidInput("h_grid and s_grid must be nonempty".into()));
    }
    if !matches!(family, PsiFamily::Ww | PsiFamily::Cond) {
        return Err(Error::InvalidInput(format!("family must be ww or cond, got {}", family.as_str())));
    }
    if !matches!(flavor, Flavor::Global | Flavor::AvgConditional | Flavor::AvgTheta | Flavor::Ww) {
        return Err(Error::InvalidInput(format!("flavor {} has no (h, s) sweep", flavor.as_str())));
    }
    if let Some(h) = h_grid.iter().find(|h| !(h.is_finite() && **h != 0.0)) {
        return Err(Error::InvalidInput(format!("h values must be finite and nonzero, got {h}")));
    }
    if let Some(s) = s_grid.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
        return Err(Error::InvalidInput(format!("s values must lie in (0, 1], got {s}")));
    }
    Ok(())
}

/// Evaluates every grid point. Per-point failures become row statuses.
pub fn sweep(
    model: &ScalarModel,
    family: PsiFamily,
    flavor: Flavor,
    h_grid: &[f64],
    s_grid: &[f64],
    cfg: &IntegrationConfig,
) -> Result<SweepTable> {
    check_sweep_inputs(family, flavor, h_grid, s_grid)?;
    cfg.validate()?;
    let mut points: Vec<(f64, f64)> = h_grid
        .iter()
        .flat_map(|&h| s_grid.iter().map(move |&s| (h, s)))
        .collect();
    points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let rows = points
        .par_iter()
        .map(|&(h, s)| SweepRow::from_outcome(h, s, flavor, evaluate(model, family, flavor, h, s, cfg)))
        .collect();
    Ok(SweepTable {
        rows,
        model_digest: digest(model.spec()),
        cfg_digest: digest(cfg),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Optimum {
    pub h_star: f64,
    pub s_star: f64,
    pub value: f64,
    /// The full result at (h_star, s_star).
    pub result: BoundResult,
    pub evaluations: usize,
    pub converged: bool,
    /// Best value on the seed grid.
    pub seed_best: f64,
}

fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

fn check_range(name: &str, r: (f64, f64)) -> Result<()> {
    if !(r.0.is_finite() && r.1.is_finite() && r.0 < r.1) {
        return Err(Error::InvalidInput(format!("{name} must be an increasing finite pair")));
    }
    Ok(())
}

/// Shift candidates for a finite parameter space: the differences between
/// support points that fall in `h_range`. Elsewhere psi vanishes identically.
fn support_shifts(model: &ScalarModel, h_range: (f64, f64)) -> Option<Vec<f64>> {
    let Space::Finite(pts) = model.parameter_space() else {
        return None;
    };
    let mut d: Vec<f64> = pts
        .iter()
        .flat_map(|a| pts.iter().map(move |b| a - b))
        .filter(|d| *d != 0.0 && *d >= h_range.0 && *d <= h_range.1)
        .collect();
    d.sort_by(|a, b| a.abs().total_cmp(&b.abs()).then(a.total_cmp(b)));
    d.dedup();
    (!d.is_empty()).then_some(d)
}

/// Maximizes the bound of `flavor` for `family` over `h_range x s_range`.
pub fn maximize(
    model: &ScalarModel,
    family: PsiFamily,
    flavor: Flavor,
    h_range: (f64, f64),
    s_range: (f64, f64),
    cfg: &IntegrationConfig,
) -> Result<Optimum> {
    check_sweep_inputs(family, flavor, &[h_range.0], &[s_range.0])?;
    check_range("h_range", h_range)?;
    check_range("s_range", s_range)?;
    if h_range.0 <= 0.0 && h_range.1 >= 0.0 {
        return Err(Error::InvalidInput("h_range must not contain 0".into()));
    }
    let s_ok = if flavor == Flavor::Ww {
        s_range.0 > 0.0 && s_range.1 < 1.0
    } else {
        s_range.0 > 0.0 && s_range.1 <= 1.0
    };
    if !s_ok {
        let close = if flavor == Flavor::Ww { ")" } else { "]" };
        return Err(Error::InvalidInput(format!("s_range must lie in (0, 1{close}")));
    }
    cfg.validate()?;
    maximize_by(
        |h, s| evaluate(model, family, flavor, h, s, cfg),
        h_range,
        s_range,
        support_shifts(model, h_range),
    )
}

/// Seed-grid search followed by alternating golden-section refinement of
/// `eval`. With `fixed_h`, h is restricted to those values and only s is refined.
pub fn maximize_by(
    eval: impl Fn(f64, f64) -> Result<BoundResult> + Sync,
    h_range: (f64, f64),
    s_range: (f64, f64),
    fixed_h: Option<Vec<f64>>,
) -> Result<Optimum> {
    check_range("h_range", h_range)?;
    check_range("s_range", s_range)?;
    let h_seeds = fixed_h.clone().unwrap_or_else(|| linspace(h_range.0, h_range.1, SEED_POINTS));
    let s_seeds = linspace(s_range.0, s_range.1, SEED_POINTS);
    let points: Vec<(f64, f64)> = h_seeds
        .iter()
        .flat_map(|&h| s_seeds.iter().map(move |&s| (h, s)))
        .collect();
    let seeds: Vec<(f64, f64, Result<BoundResult>)> = points
        .par_iter()
        .map(|&(h, s)| (h, s, eval(h, s)))
        .collect();
    let mut evaluations = seeds.len();

    let score = |r: &Result<BoundResult>| match r {
        Ok(BoundResult {
            value: Some(v),
            status: Status::Ok,
            ..
        }) => *v,
        _ => f64::NEG_INFINITY,
    };
    // best value; ties toward smaller |h|, then smaller s
    let mut best: Option<(f64, f64, f64, BoundResult)> = None;
    for (h, s, r) in &seeds {
        let v = score(r);
        if v == f64::NEG_INFINITY {
            continue;
        }
        let better = match &best {
            None => true,
            Some((bh, bs, bv, _)) => {
                v > *bv || (v == *bv && (h.abs() < bh.abs() || (h.abs() == bh.abs() && s < bs)))
            }
        };
        if better {
            best = Some((*h, *s, v, r.clone().expect("scored ok")));
        }
    }
    let Some((mut bh, mut bs, mut bv, mut br)) = best else {
        return Err(Error::AllDegenerate);
    };
    let seed_best = bv;

    let h_step = (h_range.1 - h_range.0) / (SEED_POINTS - 1) as f64;
    let s_step = (s_range.1 - s_range.0) / (SEED_POINTS - 1) as f64;
    let mut hb = if fixed_h.is_some() {
        (bh, bh)
    } else {
        ((bh - h_step).max(h_range.0), (bh + h_step).min(h_range.1))
    };
    let mut sb = ((bs - s_step).max(s_range.0), (bs + s_step).min(s_range.1));
    let h_tol = REL_WIDTH * (h_range.1 - h_range.0);
    let s_tol = REL_WIDTH * (s_range.1 - s_range.0);
    const INV_PHI: f64 = 0.618_033_988_749_894_9;

    let mut converged = false;
    loop {
        let h_done = hb.1 - hb.0 < h_tol;
        let s_done = sb.1 - sb.0 < s_tol;
        if h_done && s_done {
            converged = true;
            break;
        }
        let coords: &[bool] = match (h_done, s_done) {
            (false, false) => &[true, false],
            (false, true) => &[true],
            _ => &[false],
        };
        for &along_h in coords {
            if evaluations + 2 > MAX_EVALUATIONS {
                break;
            }
            let (a, b) = if along_h { hb } else { sb };
            let x1 = b - INV_PHI * (b - a);
            let x2 = a + INV_PHI * (b - a);
            let at = |x: f64| if along_h { (x, bs) } else { (bh, x) };
            let (p1, p2) = (at(x1), at(x2));
            let r1 = eval(p1.0, p1.1);
            let r2 = eval(p2.0, p2.1);
            evaluations += 2;
            let (f1, f2) = (score(&r1), score(&r2));
            let shrunk = if f1 >= f2 { (a, x2) } else { (x1, b) };
            if along_h {
                hb = shrunk;
            } else {
                sb = shrunk;
            }
            for (p, f, r) in [(p1, f1, r1), (p2, f2, r2)] {
                if f > bv {
                    bh = p.0;
                    bs = p.1;
                    bv = f;
                    br = r.expect("scored ok");
                }
            }
        }
        if evaluations + 2 > MAX_EVALUATIONS {
            break;
        }
    }
    debug_assert!(bv >= seed_best);
    Ok(Optimum {
        h_star: bh,
        s_star: bs,
        value: bv,
        result: br,
        evaluations,
        converged,
        seed_best,
    })
}

pub const OPTIMUM_CSV_HEADER: &str = "h,s,flavor,value,numerator,denominator,status,evaluations,converged";

/// One-row CSV describing an optimum.
pub fn optimum_csv(opt: &Optimum, digits: usize) -> String {
    format!(
        "{}\n{},{},{},{},{},{},{},{},{}\n",
        OPTIMUM_CSV_HEADER,
        fmt_sig(opt.h_star, digits),
        fmt_sig(opt.s_star, digits),
        opt.result.flavor.as_str(),
        fmt_sig(opt.value, digits),
        fmt_sig(opt.result.numerator, digits),
        fmt_sig(opt.result.denominator, digits),
        opt.result.status.as_str(),
        opt.evaluations,
        opt.converged
    )
}
