//! The `series` subcommand: evaluate the hbar-series operators on a jet
//! fixture file.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use kweights::jetfile::{self, JetFixture};
use kweights::series::{
    bullet_product, compute_r, connection_a, cotangent_curvature, curvature_f, flatness_residual,
    gamma_equation_residual, pullback_bivector, pullback_function, star_product, HbarForm,
    HbarSeries, SeriesOpError,
};

use crate::operand;
use crate::render::{hbar_series, hbar_series_json};
use crate::EXIT_INPUT;

#[derive(Clone, Copy, ValueEnum)]
pub enum SeriesOp {
    Star,
    Connection,
    Curvature,
    Bullet,
    Flatness,
    Residual,
    Cotangent,
}

#[derive(Args)]
pub struct SeriesArgs {
    #[arg(value_enum)]
    op: SeriesOp,
    /// Path to the jet fixture file
    #[arg(long)]
    jets: PathBuf,
    /// hbar truncation order
    #[arg(long, default_value_t = 4)]
    order: u32,
    /// Polynomial operands, e.g. `y1 y2` for star or `x1 x2` for bullet
    operands: Vec<String>,
}

struct Failure(String);

impl From<SeriesOpError> for Failure {
    fn from(e: SeriesOpError) -> Self {
        Failure(e.to_string())
    }
}

impl From<operand::OperandError> for Failure {
    fn from(e: operand::OperandError) -> Self {
        Failure(e.to_string())
    }
}

pub fn run(args: &SeriesArgs, json: bool) -> i32 {
    match run_inner(args, json) {
        Ok(()) => 0,
        Err(Failure(msg)) => {
            eprintln!("error: {msg}");
            EXIT_INPUT
        }
    }
}

fn load(args: &SeriesArgs) -> Result<JetFixture, Failure> {
    let text = std::fs::read_to_string(&args.jets)
        .map_err(|e| Failure(format!("cannot read {}: {e}", args.jets.display())))?;
    jetfile::parse(&text).map_err(|e| Failure(e.to_string()))
}

fn need_pi(fx: &JetFixture) -> Result<&Vec<Vec<kweights::jet::BasePoly>>, Failure> {
    fx.pi
        .as_ref()
        .ok_or_else(|| Failure("this operator needs a `pi` block in the jet file".into()))
}

fn need_operands<'a>(args: &'a SeriesArgs, n: usize) -> Result<&'a [String], Failure> {
    if args.operands.len() != n {
        return Err(Failure(format!(
            "expected {n} operand(s), got {}",
            args.operands.len()
        )));
    }
    Ok(&args.operands)
}

fn emit_scalar(label: &str, s: &HbarSeries, json: bool) {
    if json {
        println!("{}", serde_json::json!({ "op": label, "series": hbar_series_json(s) }));
    } else {
        println!("{}", hbar_series(s));
    }
}

fn emit_indexed(label: &str, comps: Vec<(String, HbarSeries)>, json: bool) {
    if json {
        let rows: Vec<_> = comps
            .iter()
            .map(|(idx, s)| serde_json::json!({ "index": idx, "series": hbar_series_json(s) }))
            .collect();
        println!("{}", serde_json::json!({ "op": label, "components": rows }));
    } else {
        for (idx, s) in comps {
            println!("{idx}: {}", hbar_series(&s));
        }
    }
}

fn one_form_components(form: &HbarForm, d: usize) -> Vec<(String, HbarSeries)> {
    (0..d)
        .map(|i| (format!("dx{}", i + 1), form.one_form_component(i).clone()))
        .collect()
}

fn two_form_components(form: &HbarForm, d: usize) -> Vec<(String, HbarSeries)> {
    let mut out = Vec::new();
    for i in 0..d {
        for j in (i + 1)..d {
            out.push((
                format!("dx{}^dx{}", i + 1, j + 1),
                form.two_form_component(i, j),
            ));
        }
    }
    out
}

fn run_inner(args: &SeriesArgs, json: bool) -> Result<(), Failure> {
    let fx = load(args)?;
    let (d, caps, k) = (fx.dimension, fx.caps, args.order);
    match args.op {
        SeriesOp::Star => {
            let ops = need_operands(args, 2)?;
            let sigma = operand::parse_jet(&ops[0], d, caps)?;
            let tau = operand::parse_jet(&ops[1], d, caps)?;
            let pihat = pullback_bivector(&fx.phi, need_pi(&fx)?)?;
            let p = star_product(&pihat, &sigma, &tau, k);
            emit_scalar("star", p.scalar(), json);
        }
        SeriesOp::Connection => {
            let ops = need_operands(args, 1)?;
            let sigma = operand::parse_jet(&ops[0], d, caps)?;
            let r = compute_r(&fx.phi)?;
            let pihat = pullback_bivector(&fx.phi, need_pi(&fx)?)?;
            let a = connection_a(&r, &pihat, &sigma, k);
            emit_indexed("connection", one_form_components(&a, d), json);
        }
        SeriesOp::Curvature => {
            need_operands(args, 0)?;
            let r = compute_r(&fx.phi)?;
            let pihat = pullback_bivector(&fx.phi, need_pi(&fx)?)?;
            let f = curvature_f(&r, &pihat, k);
            emit_indexed("curvature", two_form_components(&f, d), json);
        }
        SeriesOp::Bullet => {
            let ops = need_operands(args, 2)?;
            let f = operand::parse_base(&ops[0], d)?;
            let g = operand::parse_base(&ops[1], d)?;
            let s = bullet_product(&fx.phi, need_pi(&fx)?, &f, &g, k)?;
            emit_scalar("bullet", &s, json);
        }
        SeriesOp::Flatness => {
            need_operands(args, 0)?;
            let r = compute_r(&fx.phi)?;
            let residual = flatness_residual(&r);
            let (kx, ky) = (caps.kx.saturating_sub(1), caps.ky.saturating_sub(1));
            let mut nonzero = Vec::new();
            for ((l, m), comps) in &residual {
                for (j, c) in comps.iter().enumerate() {
                    if !c.is_zero_up_to(kx, ky) {
                        nonzero.push(format!("({},{}) d/dy{}: {c}", l + 1, m + 1, j + 1));
                    }
                }
            }
            if json {
                println!(
                    "{}",
                    serde_json::json!({
                        "op": "flatness",
                        "checked_caps": { "kx": kx, "ky": ky },
                        "all_zero": nonzero.is_empty(),
                        "nonzero": nonzero,
                    })
                );
            } else if nonzero.is_empty() {
                println!("flatness residual: all components vanish up to caps ({kx}, {ky})");
            } else {
                println!("flatness residual: NONZERO components up to caps ({kx}, {ky}):");
                for line in nonzero {
                    println!("  {line}");
                }
            }
        }
        SeriesOp::Residual => {
            // gamma_l = T phi* f at hbar^0 for every component l
            let ops = need_operands(args, 1)?;
            let f = operand::parse_base(&ops[0], d)?;
            let sigma = pullback_function(&fx.phi, &f)?;
            let pihat = pullback_bivector(&fx.phi, need_pi(&fx)?)?;
            let gamma: Vec<HbarSeries> = (0..d)
                .map(|_| {
                    let mut s = HbarSeries::zero(d, caps, k);
                    s.coeffs[0] = sigma.clone();
                    s
                })
                .collect();
            let res = gamma_equation_residual(&fx.phi, &pihat, &gamma, k)?;
            emit_indexed("residual", two_form_components(&res, d), json);
        }
        SeriesOp::Cotangent => {
            need_operands(args, 0)?;
            let split = fx
                .split
                .ok_or_else(|| Failure("this operator needs a `split` field in the jet file".into()))?;
            let r = compute_r(&fx.phi)?;
            let pihat = pullback_bivector(&fx.phi, need_pi(&fx)?)?;
            let out = cotangent_curvature(&r, &pihat, split, k)?;
            emit_indexed("cotangent", two_form_components(&out, d), json);
        }
    }
    Ok(())
}
