use std::cell::RefCell;
use std::path::{Path, PathBuf};
use std::time::Instant;

use iga_core::fem1d::{price_put_1d, Discretization1D};
use iga_core::fem2d::{price_put_2d, Discretization2D};
use iga_core::fitting::{fit_bspline, fit_nurbs, FitResult, NurbsFitOptions};
use iga_core::metrics::mean_l2_error;
use iga_core::models::ModelSpec;
use iga_core::reference::{
    constant_vol_put, heston_bates_put, mc_fsvjd_put, McConfig, Method, ReferencePrice,
};
use iga_core::splines::KnotVector;
use serde::Serialize;

use crate::config::{FitTarget, Mode, ReferenceMethod, Resolved};
use crate::error::{CliError, Result};
use crate::output::{grid, write_json, Csv};

pub fn run(ctx: &Resolved, out: &Path) -> Result<Vec<PathBuf>> {
    match ctx.mode {
        Mode::Fit => run_fit(ctx, out),
        Mode::Price1d => run_price1d(ctx, out),
        Mode::Price2d => run_price2d(ctx, out),
        Mode::Reference => run_reference(ctx, out),
        Mode::Table => run_table(ctx, out),
    }
}

fn constant_model(ctx: &Resolved) -> Result<&ModelSpec> {
    let m = ctx.model()?;
    if m.constant_sigma().is_none() {
        return Err(CliError::config(
            "this mode needs a constant-volatility model (bs or merton)",
        ));
    }
    Ok(m)
}

fn stochastic_model(ctx: &Resolved) -> Result<&ModelSpec> {
    let m = ctx.model()?;
    if m.fractional().is_none() {
        return Err(CliError::config(
            "this mode needs a stochastic-volatility model (heston, bates or fsvjd)",
        ));
    }
    Ok(m)
}

fn single(list: &[usize], name: &str) -> Result<usize> {
    match list {
        [x] => Ok(*x),
        _ => Err(CliError::config(format!(
            "discretization.{name} must hold a single value in this mode"
        ))),
    }
}

fn disc_1d(ctx: &Resolved, p: usize, n_s: usize) -> Result<Discretization1D> {
    let d = &ctx.config.discretization;
    let mut disc = Discretization1D::new(p, n_s, d.n_tau, ctx.s_max()?);
    disc.omega = d.omega;
    if let Some(m) = d.strike_multiplicity {
        disc.strike_knot_multiplicity = m;
    }
    disc.validate(ctx.model()?.strike)
        .map_err(CliError::config)?;
    Ok(disc)
}

fn disc_2d(ctx: &Resolved, p: usize, n_s: usize) -> Result<Discretization2D> {
    let d = &ctx.config.discretization;
    let mut disc = Discretization2D::new(p, n_s, d.n_tau, ctx.s_max()?, d.v_max);
    disc.omega = d.omega;
    disc.n_v = d.n_v.unwrap_or(n_s);
    if let Some(m) = d.strike_multiplicity {
        disc.strike_knot_multiplicity = m;
    }
    disc.validate(ctx.model()?.strike)
        .map_err(CliError::config)?;
    Ok(disc)
}

/// Runs `f` on a target that may fail, keeping the first failure.
fn fallible_target<T>(
    target: impl Fn(f64) -> iga_core::Result<f64>,
    f: impl FnOnce(&dyn Fn(f64) -> f64) -> iga_core::Result<T>,
) -> Result<T> {
    let failure = RefCell::new(None);
    let wrapped = |x: f64| match target(x) {
        Ok(v) => v,
        Err(e) => {
            failure.borrow_mut().get_or_insert(e);
            f64::NAN
        }
    };
    let out = f(&wrapped);
    if let Some(e) = failure.into_inner() {
        return Err(e.into());
    }
    Ok(out?)
}

#[derive(Serialize)]
struct FitSummary<'a> {
    target: FitTarget,
    degree: usize,
    knots: &'a [f64],
    eps_bs: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    eps_nrb: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nurbs_iterations: Option<usize>,
    coefficients_bs: &'a [f64],
    #[serde(skip_serializing_if = "Option::is_none")]
    coefficients_nrb: Option<&'a [f64]>,
}

fn run_fit(ctx: &Resolved, out: &Path) -> Result<Vec<PathBuf>> {
    let fit = ctx
        .config
        .fit
        .as_ref()
        .ok_or_else(|| CliError::config("fit mode needs a [fit] section"))?;
    let (lo, hi) = match (fit.domain, fit.target.is_toy()) {
        (Some([a, b]), _) => (a, b),
        (None, true) => (0.0, 6.0),
        (None, false) => (0.0, ctx.s_max()?),
    };
    let kink = if fit.target.is_toy() {
        0.5 * (lo + hi)
    } else {
        ctx.model()?.strike
    };
    let elements = fit
        .elements
        .unwrap_or(if fit.target.is_toy() { 6 } else { 12 });
    let multiplicity = fit
        .kink_multiplicity
        .unwrap_or(if fit.target.is_toy() { 1 } else { 3 });
    let kv = KnotVector::open_uniform(fit.degree, lo, hi, elements).map_err(CliError::config)?;
    let kv = if multiplicity > 1 || kv.multiplicity(kink) > 0 {
        kv.with_multiplicity(kink, multiplicity)
            .map_err(CliError::config)?
    } else {
        kv
    };

    let t = ctx.model.as_ref().map_or(0.0, |m| m.maturity);
    let target: Box<dyn Fn(f64) -> iga_core::Result<f64>> = match fit.target {
        FitTarget::Exp => Box::new(|x: f64| Ok((-x).exp())),
        FitTarget::Put => Box::new(move |x: f64| Ok((kink - x).max(0.0))),
        FitTarget::Digital => Box::new(move |x: f64| Ok(if x >= kink { 1.0 } else { 0.0 })),
        FitTarget::Merton => {
            let m = constant_model(ctx)?.clone();
            Box::new(move |s| constant_vol_put(&m, t, s).map(|p| p.value))
        }
        FitTarget::Svjd => {
            let m = stochastic_model(ctx)?.clone();
            let v0 = ctx
                .model_config()?
                .v0
                .ok_or_else(|| CliError::config("the svjd curve target needs model.v0"))?;
            Box::new(move |s| heston_bates_put(&m, t, s, v0).map(|p| p.value))
        }
    };

    log::info!("fitting {:?} with {} functions", fit.target, kv.num_basis());
    let bs = fallible_target(&target, |f| fit_bspline(&kv, f))?;
    let nrb: Option<FitResult> = if fit.nurbs {
        Some(fallible_target(&target, |f| {
            fit_nurbs(&kv, f, None, NurbsFitOptions::default())
        })?)
    } else {
        None
    };

    let mut header = vec!["xi", "f", "f_bs"];
    if nrb.is_some() {
        header.push("f_nrb");
    }
    let mut csv = Csv::with_columns(&ctx.hash, &header);
    for x in grid(lo, hi, ctx.config.output.samples_s) {
        let mut row = vec![target(x)?, bs.eval(&kv, x)?];
        if let Some(n) = &nrb {
            row.push(n.eval(&kv, x)?);
        }
        row.insert(0, x);
        csv.row(&row);
    }
    let summary = FitSummary {
        target: fit.target,
        degree: fit.degree,
        knots: kv.knots(),
        eps_bs: bs.mean_l2_error,
        eps_nrb: nrb.as_ref().map(|n| n.mean_l2_error),
        weights: nrb.as_ref().map(|n| n.weights.as_slice()),
        nurbs_iterations: nrb.as_ref().map(|n| n.iterations),
        coefficients_bs: &bs.coefficients,
        coefficients_nrb: nrb.as_ref().map(|n| n.coefficients.as_slice()),
    };
    Ok(vec![
        write_json(out, "fit.json", &ctx.hash, &summary)?,
        csv.write(out, "fit_samples.csv")?,
    ])
}

#[derive(Serialize)]
struct PriceSummary {
    degree: usize,
    n_s: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    n_v: Option<usize>,
    n_tau: usize,
    n_basis: usize,
    /// Against the reference on `[0, s_max]`; at `v = 0` for 2-D runs.
    mean_l2_error: f64,
    s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<f64>,
    price: f64,
    reference: f64,
}

fn run_price1d(ctx: &Resolved, out: &Path) -> Result<Vec<PathBuf>> {
    let model = constant_model(ctx)?;
    let d = &ctx.config.discretization;
    let disc = disc_1d(ctx, single(&d.p, "p")?, single(&d.n_s, "n_s")?)?;
    let res = price_put_1d(model, &disc)?;
    let t = model.maturity;
    let reference = |s: f64| constant_vol_put(model, t, s).map(|p| p.value);
    let err = fallible_target(reference, |g| {
        Ok(mean_l2_error(
            |s| res.put_final(s).unwrap_or(f64::NAN),
            g,
            0.0,
            disc.s_max,
            &res.breakpoints(),
        ))
    })?;

    let n = res.basis.num_basis();
    let mut header = vec!["step".to_string(), "tau".to_string()];
    header.extend((0..n).map(|i| format!("c{i}")));
    let mut coefs = Csv::new(&ctx.hash, &header);
    for (k, (tau, c)) in res.taus.iter().zip(&res.coefficients).enumerate() {
        let mut row = vec![k as f64, *tau];
        row.extend(c.iter());
        coefs.row(&row);
    }
    let mut samples = Csv::with_columns(&ctx.hash, &["s", "price", "reference", "error"]);
    for s in grid(0.0, disc.s_max, ctx.config.output.samples_s) {
        let (price, exact) = (res.put_final(s)?, reference(s)?);
        samples.row(&[s, price, exact, price - exact]);
    }
    let s0 = ctx.config.reference.s.unwrap_or(model.strike);
    let summary = PriceSummary {
        degree: disc.degree,
        n_s: disc.n_s,
        n_v: None,
        n_tau: disc.n_tau,
        n_basis: n,
        mean_l2_error: err,
        s: s0,
        v: None,
        price: res.put_final(s0)?,
        reference: reference(s0)?,
    };
    Ok(vec![
        write_json(out, "price1d.json", &ctx.hash, &summary)?,
        coefs.write(out, "price1d_coefficients.csv")?,
        samples.write(out, "price1d_samples.csv")?,
    ])
}

fn run_price2d(ctx: &Resolved, out: &Path) -> Result<Vec<PathBuf>> {
    let model = stochastic_model(ctx)?;
    let d = &ctx.config.discretization;
    let disc = disc_2d(ctx, single(&d.p, "p")?, single(&d.n_s, "n_s")?)?;
    log::info!(
        "2-D run with p = {}, n_s = {}, n_v = {}",
        disc.degree,
        disc.n_s,
        disc.n_v
    );
    let res = price_put_2d(model, &disc)?;
    let t = model.maturity;
    let reference = |s: f64, v: f64| heston_bates_put(model, t, s, v).map(|p| p.value);
    let err = fallible_target(
        |s| reference(s, 0.0),
        |g| {
            Ok(mean_l2_error(
                |s| res.put_final(s, 0.0).unwrap_or(f64::NAN),
                g,
                0.0,
                disc.s_max,
                &res.s_breakpoints(),
            ))
        },
    )?;

    let out_cfg = &ctx.config.output;
    let mut surface = Csv::with_columns(&ctx.hash, &["s", "v", "price"]);
    for v in grid(0.0, disc.v_max, out_cfg.samples_v) {
        for s in grid(0.0, disc.s_max, out_cfg.samples_s) {
            surface.row(&[s, v, res.put_final(s, v)?]);
        }
    }
    let mut slice = Csv::with_columns(&ctx.hash, &["s", "price", "reference", "error"]);
    for s in grid(0.0, disc.s_max, out_cfg.samples_s) {
        let (price, exact) = (res.put_final(s, 0.0)?, reference(s, 0.0)?);
        slice.row(&[s, price, exact, price - exact]);
    }
    let s0 = ctx.config.reference.s.unwrap_or(model.strike);
    let v0 = initial_variance(ctx)?;
    let summary = PriceSummary {
        degree: disc.degree,
        n_s: disc.n_s,
        n_v: Some(disc.n_v),
        n_tau: disc.n_tau,
        n_basis: res.basis.len(),
        mean_l2_error: err,
        s: s0,
        v: Some(v0),
        price: res.put_final(s0, v0)?,
        reference: reference(s0, v0)?,
    };
    Ok(vec![
        write_json(out, "price2d.json", &ctx.hash, &summary)?,
        surface.write(out, "price2d_surface.csv")?,
        slice.write(out, "price2d_slice_v0.csv")?,
    ])
}

fn initial_variance(ctx: &Resolved) -> Result<f64> {
    Ok(ctx
        .config
        .reference
        .v0
        .or(ctx.model_config()?.v0)
        .unwrap_or(0.0))
}

#[derive(Serialize)]
struct ReferenceSummary {
    #[serde(flatten)]
    price: ReferencePrice,
    s: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v0: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

fn run_reference(ctx: &Resolved, out: &Path) -> Result<Vec<PathBuf>> {
    let model = ctx.model()?;
    let rc = &ctx.config.reference;
    let s = rc.s.unwrap_or(model.strike);
    let t = model.maturity;
    let summary = match model.fractional() {
        None => {
            if rc.method == ReferenceMethod::MonteCarlo {
                return Err(CliError::config(
                    "Monte Carlo is only available for stochastic-volatility models",
                ));
            }
            ReferenceSummary {
                price: constant_vol_put(model, t, s)?,
                s,
                v0: None,
                seed: None,
            }
        }
        Some(f) => {
            let v0 = initial_variance(ctx)?;
            let mc = match rc.method {
                ReferenceMethod::Auto => f.hurst != 0.5,
                ReferenceMethod::Fourier => false,
                ReferenceMethod::MonteCarlo => true,
            };
            if mc {
                let cfg = McConfig {
                    n_paths: rc.n_paths,
                    n_steps: rc.n_steps,
                    seed: ctx.seed,
                };
                let r = mc_fsvjd_put(model, s, v0, cfg)?;
                ReferenceSummary {
                    price: ReferencePrice {
                        method: Method::MonteCarlo,
                        value: r.price,
                        stderr: Some(r.stderr),
                    },
                    s,
                    v0: Some(v0),
                    seed: Some(ctx.seed),
                }
            } else {
                ReferenceSummary {
                    price: heston_bates_put(model, t, s, v0)?,
                    s,
                    v0: Some(v0),
                    seed: None,
                }
            }
        }
    };
    Ok(vec![write_json(
        out,
        "reference.json",
        &ctx.hash,
        &summary,
    )?])
}

/// Error of one table cell against the designated reference.
fn table_cell(ctx: &Resolved, p: usize, n_s: usize) -> Result<f64> {
    let model = ctx.model()?;
    let t = model.maturity;
    if model.fractional().is_some() {
        let disc = disc_2d(ctx, p, n_s)?;
        let res = price_put_2d(model, &disc)?;
        fallible_target(
            |s| heston_bates_put(model, t, s, 0.0).map(|r| r.value),
            |g| {
                Ok(mean_l2_error(
                    |s| res.put_final(s, 0.0).unwrap_or(f64::NAN),
                    g,
                    0.0,
                    disc.s_max,
                    &res.s_breakpoints(),
                ))
            },
        )
    } else {
        let disc = disc_1d(ctx, p, n_s)?;
        let res = price_put_1d(model, &disc)?;
        fallible_target(
            |s| constant_vol_put(model, t, s).map(|r| r.value),
            |g| {
                Ok(mean_l2_error(
                    |s| res.put_final(s).unwrap_or(f64::NAN),
                    g,
                    0.0,
                    disc.s_max,
                    &res.breakpoints(),
                ))
            },
        )
    }
}

fn run_table(ctx: &Resolved, out: &Path) -> Result<Vec<PathBuf>> {
    let model = ctx.model()?;
    let d = &ctx.config.discretization;
    // reject bad cells before spending time on any of them
    for &p in &d.p {
        for &n_s in &d.n_s {
            if model.fractional().is_some() {
                disc_2d(ctx, p, n_s)?;
            } else {
                disc_1d(ctx, p, n_s)?;
            }
        }
    }
    let mut header = vec!["n_s".to_string()];
    header.extend(d.p.iter().map(|p| format!("p={p}")));
    let mut errors = Csv::new(&ctx.hash, &header);
    let mut timings = Csv::new(&ctx.hash, &header);
    for &n_s in &d.n_s {
        let mut err_row = vec![n_s as f64];
        let mut time_row = vec![n_s as f64];
        for &p in &d.p {
            let start = Instant::now();
            let err = match table_cell(ctx, p, n_s) {
                Ok(e) => e,
                Err(e) => {
                    log::error!("cell p = {p}, n_s = {n_s} failed: {e}");
                    f64::NAN
                }
            };
            let secs = start.elapsed().as_secs_f64();
            log::info!("p = {p}, n_s = {n_s}: error {err:.6e} in {secs:.2} s");
            err_row.push(err);
            time_row.push(secs);
        }
        errors.row(&err_row);
        timings.row(&time_row);
    }
    Ok(vec![
        errors.write(out, "table_errors.csv")?,
        timings.write(out, "table_timings.csv")?,
    ])
}
