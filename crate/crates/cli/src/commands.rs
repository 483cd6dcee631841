use std::collections::HashMap;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ldas::data::{load_csv, write_csv, IngestSchema};
use ldas::draws_io::{self, DrawsMeta};
use ldas::dynamic_sampler::{run_dynamic, DynamicConfig, SgldDiagnostics, StepSchedule};
use ldas::posterior::{self, anchoring_diagnostic, rank_questions_by_divergence, type_proportion_series};
use ldas::regress::{self, RegressionSpec};
use ldas::selection::{self, max_identifiable_k};
use ldas::simulate::{self, even_split, ChainSettings, DesignSpec, RecoveryOptions};
use ldas::static_sampler::{anchored_priors, run_gibbs, StaticConfig};
use ldas::{Error, Mode, ModelConfig, PosteriorDraws, RngStream, SurveyDataset};
use rayon::prelude::*;
use serde_json::json;

use crate::args::*;
use crate::error::{CliError, CliResult};
use crate::manifest::RunContext;

pub const GENERATED_REGRESSOR_NOTE: &str =
    "standard errors are classical OLS and are not corrected for the estimated memberships";

pub fn execute(command: &Command, ctx: &mut RunContext) -> CliResult<()> {
    match command {
        Command::Fit(a) => fit(a, ctx),
        Command::Select(a) => select(a, ctx),
        Command::Simulate(SimulateCommand::Data(a)) => simulate_data(a, ctx),
        Command::Simulate(SimulateCommand::Recovery(a)) => recovery(a, ctx),
        Command::Summarize(a) => summarize(a, ctx),
        Command::Regress(a) => regress(a, ctx),
        Command::Ics(a) => ics(a, ctx),
        Command::Rerun(_) => unreachable!("handled by the caller"),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize, ctx: &mut RunContext) -> CliResult<()> {
    let path = dir.join(name);
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(&path, text + "\n").map_err(|e| CliError::io(&path, e))?;
    ctx.output(name);
    Ok(())
}

fn csv_writer(dir: &Path, name: &str, ctx: &mut RunContext) -> CliResult<csv::Writer<BufWriter<File>>> {
    let path = dir.join(name);
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    ctx.output(name);
    Ok(csv::Writer::from_writer(BufWriter::new(file)))
}

fn finish<W: std::io::Write>(mut w: csv::Writer<W>) -> CliResult<()> {
    w.flush().map_err(|e| CliError::Core(Error::Io { path: "csv output".into(), source: e }))
}

fn load_input(input: &InputArgs, ctx: &mut RunContext) -> CliResult<SurveyDataset> {
    let mut schema = IngestSchema::from_json_file(&input.schema)?;
    if let Some(mode) = input.mode {
        schema.mode = mode.into();
    }
    if let Some(policy) = input.missing_policy {
        for q in &mut schema.questions {
            q.missing_policy = policy.into();
        }
    }
    let data = load_csv(&input.data, &schema)?;
    ctx.record_input(&input.data)?;
    ctx.record_input(&input.schema)?;
    Ok(data)
}

fn model_config(data: &SurveyDataset, k: usize, s: &SamplerArgs, ctx: &mut RunContext) -> ModelConfig {
    let priors = anchored_priors(data, k, s.eta_diag, s.alpha);
    for w in priors.warnings {
        ctx.warnings.push(w);
    }
    match data.mode() {
        Mode::Static => ModelConfig::Static(StaticConfig {
            k,
            alpha: priors.alpha,
            eta: priors.eta,
            iterations: s.iterations,
            burn_in: s.burn_in,
            thin: s.thin,
        }),
        Mode::Dynamic => ModelConfig::Dynamic(DynamicConfig {
            k,
            eta: priors.eta,
            v0: s.v0,
            s0: s.s0,
            schedule: StepSchedule { a: s.sgld_a, b: s.sgld_b, c: s.sgld_c },
            iterations: s.iterations,
            burn_in: s.burn_in,
            thin: s.thin,
            batch_size: s.batch_size,
        }),
    }
}

fn check_k_bound(data: &SurveyDataset, k: usize, ctx: &mut RunContext) -> CliResult<usize> {
    let bound = max_identifiable_k(data.n_labels(), data.n_questions(), data.total_categories())?;
    if k > bound {
        ctx.warn(format!(
            "K = {k} exceeds the counting-rule bound {bound} for {} labels, {} questions and {} categories; \
             the model may not be identified",
            data.n_labels(),
            data.n_questions(),
            data.total_categories()
        ));
    }
    Ok(bound)
}

/// Chain `c` draws from stream `c` of the seed. Chains run concurrently and
/// are merged in index order.
fn run_chains(
    data: &SurveyDataset,
    config: &ModelConfig,
    seed: u64,
    chains: usize,
) -> CliResult<(PosteriorDraws, Vec<SgldDiagnostics>)> {
    if chains == 0 {
        return Err(CliError::Usage("--chains must be at least 1".into()));
    }
    let runs = (0..chains)
        .into_par_iter()
        .map(|c| {
            let mut rng = RngStream::new(seed, c as u64);
            match config {
                ModelConfig::Static(cfg) => run_gibbs(data, cfg, &mut rng).map(|d| (d, None)),
                ModelConfig::Dynamic(cfg) => run_dynamic(data, cfg, &mut rng).map(|r| (r.draws, Some(r.diagnostics))),
            }
        })
        .collect::<ldas::Result<Vec<_>>>()?;
    let mut draws = Vec::with_capacity(chains);
    let mut diagnostics = Vec::new();
    for (d, diag) in runs {
        draws.push(d);
        diagnostics.extend(diag);
    }
    Ok((PosteriorDraws::merge(draws)?, diagnostics))
}

fn fit(a: &FitArgs, ctx: &mut RunContext) -> CliResult<()> {
    let data = load_input(&a.input, ctx)?;
    let bound = check_k_bound(&data, a.k, ctx)?;
    let config = model_config(&data, a.k, &a.sampler, ctx);
    ctx.seed = Some(a.sampler.seed);
    ctx.config = json!({
        "model": config,
        "chains": a.sampler.chains,
        "k_max_counting": bound,
    });
    let (draws, diagnostics) = run_chains(&data, &config, a.sampler.seed, a.sampler.chains)?;
    create_dir(&a.out)?;
    draws_io::write_draws(&a.out, &draws, &DrawsMeta::new(&draws, &data))?;
    ctx.output(draws_io::DRAWS_FILE);
    ctx.output(draws_io::META_FILE);
    if !diagnostics.is_empty() {
        draws_io::write_diagnostics(&a.out.join(draws_io::DIAGNOSTICS_FILE), &diagnostics)?;
        ctx.output(draws_io::DIAGNOSTICS_FILE);
    }
    Ok(())
}

fn select(a: &SelectArgs, ctx: &mut RunContext) -> CliResult<()> {
    if a.k_max == 0 {
        return Err(CliError::Usage("--k-max must be at least 1".into()));
    }
    let data = load_input(&a.input, ctx)?;
    let ks: Vec<usize> = (1..=a.k_max).collect();
    let mut configs = Vec::new();
    for &k in &ks {
        check_k_bound(&data, k, ctx)?;
        configs.push(model_config(&data, k, &a.sampler, ctx));
    }
    ctx.seed = Some(a.sampler.seed);
    ctx.config = json!({
        "k_range": [1, a.k_max],
        "scree_threshold": a.scree_threshold,
        "chains": a.sampler.chains,
        "models": configs,
    });
    let report = selection::select_k(&data, &ks, a.scree_threshold, |k| {
        run_chains(&data, &configs[k - 1], a.sampler.seed, a.sampler.chains)
            .map(|(d, _)| d)
            .map_err(|e| match e {
                CliError::Core(e) => e,
                other => Error::InvalidParameter(format!("{other:?}")),
            })
    })?;
    create_dir(&a.out)?;
    write_json(&a.out, "selection.json", &report, ctx)?;
    let mut w = csv_writer(&a.out, "scree.csv", ctx)?;
    w.write_record(["index", "eigenvalue", "cumulative_share"])?;
    let total: f64 = report.eigenvalues.iter().sum();
    let mut cum = 0.0;
    for (i, l) in report.eigenvalues.iter().enumerate() {
        cum += l;
        let share = if total > 0.0 { cum / total } else { 0.0 };
        w.write_record([(i + 1).to_string(), l.to_string(), share.to_string()])?;
    }
    finish(w)?;
    let mut w = csv_writer(&a.out, "bic.csv", ctx)?;
    w.write_record(["k", "loglik", "n_params", "penalty", "bic"])?;
    for b in report.bic_by_k.values() {
        w.write_record([
            b.k.to_string(),
            b.loglik.to_string(),
            b.n_params.to_string(),
            b.penalty.to_string(),
            b.bic.to_string(),
        ])?;
    }
    finish(w)
}

fn simulate_data(a: &SimDataArgs, ctx: &mut RunContext) -> CliResult<()> {
    let base = simulate::Design::from(a.design).spec();
    let mut spec = DesignSpec {
        groups: a.groups.unwrap_or(base.groups),
        questions: a.questions.unwrap_or(base.questions),
        categories: a.categories.unwrap_or(base.categories),
        k: a.k.unwrap_or(base.k),
    };
    if let Some(t) = a.periods {
        spec.groups = 1;
        if t == 0 {
            return Err(CliError::Usage("--periods must be at least 1".into()));
        }
    }
    if spec.groups == 0 || spec.questions == 0 || spec.categories < 2 || spec.k == 0 {
        return Err(CliError::Usage("design needs groups, questions and K >= 1 and 2+ categories".into()));
    }
    ctx.seed = Some(a.seed);
    ctx.config = json!({
        "design": spec,
        "n": a.n,
        "periods": a.periods,
        "sigma2": a.sigma2,
        "outcome_slopes": a.outcome_slopes,
        "noise_sd": a.noise_sd,
    });
    let truth = simulate::draw_anchored_truth(spec, &mut RngStream::new(a.seed, 0))?;
    let mut data_rng = RngStream::new(a.seed, 1);
    let (data, types, truth_json) = match a.periods {
        None => {
            let (data, types) = simulate::simulate_static_with_types(&truth, &even_split(a.n, spec.groups), &mut data_rng)?;
            (data, types, serde_json::to_value(&truth).map_err(Error::from)?)
        }
        Some(t) => {
            let (data, dyn_truth) =
                simulate::simulate_dynamic(&truth, &even_split(a.n, t), &vec![a.sigma2; spec.k], &mut data_rng)?;
            let types = Vec::new();
            (data, types, serde_json::to_value(&dyn_truth).map_err(Error::from)?)
        }
    };
    create_dir(&a.out)?;
    write_csv(&data, a.out.join("data.csv"))?;
    ctx.output("data.csv");
    data.schema().to_json_file(a.out.join("schema.json"))?;
    ctx.output("schema.json");
    write_json(&a.out, "truth.json", &truth_json, ctx)?;
    if !types.is_empty() {
        let mut w = csv_writer(&a.out, "types.csv", ctx)?;
        w.write_record(["id", "type"])?;
        for (id, z) in data.ids().iter().zip(&types) {
            w.write_record([id.clone(), (z + 1).to_string()])?;
        }
        finish(w)?;
    }
    if let Some(slopes) = &a.outcome_slopes {
        if a.periods.is_some() {
            return Err(CliError::Usage("--outcome-slopes needs a static dataset".into()));
        }
        if slopes.len() != spec.k {
            return Err(CliError::Usage(format!("{} slopes for K = {}", slopes.len(), spec.k)));
        }
        let outcome = simulate::simulate_outcome(&types, slopes, a.noise_sd, &mut RngStream::new(a.seed, 2))?;
        let mut w = csv_writer(&a.out, "outcome.csv", ctx)?;
        w.write_record(["id", "y", "x", "w"])?;
        for (i, id) in data.ids().iter().enumerate() {
            w.write_record([
                id.clone(),
                outcome.outcome[i].to_string(),
                outcome.treatment[i].to_string(),
                outcome.control[i].to_string(),
            ])?;
        }
        finish(w)?;
    }
    Ok(())
}

fn recovery(a: &RecoveryArgs, ctx: &mut RunContext) -> CliResult<()> {
    let design = simulate::Design::from(a.design);
    let options = RecoveryOptions {
        chain: ChainSettings { iterations: a.iterations, burn_in: a.burn_in, thin: a.thin },
        truth_anchor: a.truth_anchor,
        eta_diag: a.eta_diag,
    };
    let spec = design.spec();
    let bound = max_identifiable_k(spec.groups, spec.questions, spec.questions * spec.categories)?;
    ctx.seed = Some(a.seed);
    ctx.config = json!({
        "design": design,
        "spec": spec,
        "k_max_counting": bound,
        "n_grid": a.n_grid,
        "reps": a.reps,
        "options": options,
    });
    let points = simulate::recovery_experiment(design, &a.n_grid, a.reps, a.seed, &options)?;
    create_dir(&a.out)?;
    let path = a.out.join("recovery.csv");
    let file = File::create(&path).map_err(|e| CliError::io(&path, e))?;
    simulate::write_recovery_csv(BufWriter::new(file), &points)?;
    ctx.output("recovery.csv");
    write_json(&a.out, "recovery.json", &points, ctx)
}

fn summarize(a: &SummarizeArgs, ctx: &mut RunContext) -> CliResult<()> {
    ctx.record_input(&a.draws.join(draws_io::DRAWS_FILE))?;
    ctx.record_input(&a.draws.join(draws_io::META_FILE))?;
    let (draws, meta) = draws_io::read_draws(&a.draws)?;
    let est = posterior::summarize(&draws)?;
    ctx.config = json!({ "interval": posterior::INTERVAL, "compare": a.compare });
    create_dir(&a.out)?;
    write_json(
        &a.out,
        "estimates.json",
        &json!({
            "question_names": meta.question_names,
            "label_values": meta.label_values,
            "estimates": est,
        }),
        ctx,
    )?;

    let mut w = csv_writer(&a.out, "membership.csv", ctx)?;
    let mut header = vec![meta.id_column.clone(), meta.label_column.clone()];
    header.extend((1..=est.n_types).map(|k| format!("type_{k}")));
    w.write_record(&header)?;
    for (i, row) in est.membership.iter().enumerate() {
        let mut rec = vec![meta.ids[i].clone(), meta.label_values[meta.labels[i]].clone()];
        rec.extend(row.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    finish(w)?;

    if draws.mode() == Mode::Dynamic {
        let series = type_proportion_series(&draws)?;
        let mut w = csv_writer(&a.out, "pi_series.csv", ctx)?;
        w.write_record(["period", "type", "mean", "lower", "upper"])?;
        for (t, row) in series.iter().enumerate() {
            for (k, iv) in row.iter().enumerate() {
                w.write_record([
                    meta.label_values[t].clone(),
                    (k + 1).to_string(),
                    iv.mean.to_string(),
                    iv.lower.to_string(),
                    iv.upper.to_string(),
                ])?;
            }
        }
        finish(w)?;
    }

    let diag = anchoring_diagnostic(&draws)?;
    if diag.switching_suspected {
        ctx.warn(format!(
            "possible label switching: {} of {} snapshots have an anchored category dominated by another type",
            diag.crossings,
            draws.len()
        ));
    }
    write_json(&a.out, "anchoring.json", &diag, ctx)?;

    if let Some(pair) = &a.compare {
        if pair.len() != 2 || pair.contains(&0) {
            return Err(CliError::Usage("--compare takes two 1-based type indices, e.g. 1,2".into()));
        }
        let ranked = rank_questions_by_divergence(&est, pair[0] - 1, pair[1] - 1)?;
        let mut w = csv_writer(&a.out, "divergence.csv", ctx)?;
        w.write_record(["question", "rao_distance"])?;
        for d in ranked {
            w.write_record([meta.question_names[d.question].clone(), d.distance.to_string()])?;
        }
        finish(w)?;
    }
    Ok(())
}

fn parse_f64(text: &str, row: usize, column: &str) -> CliResult<f64> {
    text.trim().parse().map_err(|_| {
        CliError::Core(Error::InvalidValue {
            row,
            column: column.to_string(),
            message: format!("'{text}' is not a number"),
        })
    })
}

fn column_index(headers: &csv::StringRecord, name: &str, path: &Path) -> CliResult<usize> {
    headers.iter().position(|h| h == name).ok_or_else(|| {
        CliError::Core(Error::Schema(format!("column '{name}' not found in {}", path.display())))
    })
}

fn regress(a: &RegressArgs, ctx: &mut RunContext) -> CliResult<()> {
    ctx.record_input(&a.data)?;
    ctx.record_input(&a.membership)?;
    ctx.config = json!({
        "outcome": a.outcome,
        "treatment": a.treatment,
        "controls": a.controls,
        "id_column": a.id_column,
    });
    ctx.notes.push(GENERATED_REGRESSOR_NOTE.into());

    let mut rdr = csv::Reader::from_path(&a.membership)?;
    let headers = rdr.headers()?.clone();
    let id_col = column_index(&headers, &a.id_column, &a.membership)?;
    let type_cols: Vec<usize> = headers
        .iter()
        .enumerate()
        .filter(|(_, h)| h.starts_with("type_"))
        .map(|(i, _)| i)
        .collect();
    if type_cols.is_empty() {
        return Err(CliError::Core(Error::Schema("membership file has no type_ columns".into())));
    }
    let mut memberships: HashMap<String, Vec<f64>> = HashMap::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = type_cols
            .iter()
            .map(|&c| parse_f64(&rec[c], r + 1, &headers[c]))
            .collect::<CliResult<Vec<f64>>>()?;
        memberships.insert(rec[id_col].to_string(), row);
    }

    let mut rdr = csv::Reader::from_path(&a.data)?;
    let headers = rdr.headers()?.clone();
    let id_col = column_index(&headers, &a.id_column, &a.data)?;
    let y_col = column_index(&headers, &a.outcome, &a.data)?;
    let x_col = column_index(&headers, &a.treatment, &a.data)?;
    let w_cols = a
        .controls
        .iter()
        .map(|c| column_index(&headers, c, &a.data))
        .collect::<CliResult<Vec<_>>>()?;
    let mut spec = RegressionSpec {
        outcome: Vec::new(),
        treatment: Vec::new(),
        treatment_name: a.treatment.clone(),
        controls: Vec::new(),
        control_names: a.controls.clone(),
        memberships: Vec::new(),
    };
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let id = &rec[id_col];
        let m = memberships.get(id).ok_or_else(|| {
            CliError::Core(Error::InvalidData(format!("respondent '{id}' has no membership row")))
        })?;
        spec.outcome.push(parse_f64(&rec[y_col], r + 1, &a.outcome)?);
        spec.treatment.push(parse_f64(&rec[x_col], r + 1, &a.treatment)?);
        spec.controls.push(
            w_cols
                .iter()
                .zip(&a.controls)
                .map(|(&c, name)| parse_f64(&rec[c], r + 1, name))
                .collect::<CliResult<Vec<_>>>()?,
        );
        spec.memberships.push(m.clone());
    }

    let design = regress::build_design(&spec)?;
    let fit = regress::ols(&spec.outcome, &design)?;
    let k = spec.n_types();
    let returns = regress::heterogeneous_returns(&fit, &a.treatment, k)?;
    let return_se = regress::heterogeneous_return_std_errors(&spec, &design, &fit)?;

    create_dir(&a.out)?;
    let mut w = csv_writer(&a.out, "coefficients.csv", ctx)?;
    w.write_record(["term", "estimate", "std_error"])?;
    for i in 0..fit.names.len() {
        w.write_record([fit.names[i].clone(), fit.coefficients[i].to_string(), fit.std_errors[i].to_string()])?;
    }
    finish(w)?;
    let mut w = csv_writer(&a.out, "returns.csv", ctx)?;
    w.write_record(["type", "return", "std_error"])?;
    for t in 0..k {
        w.write_record([(t + 1).to_string(), returns[t].to_string(), return_se[t].to_string()])?;
    }
    finish(w)?;
    write_json(
        &a.out,
        "regression.json",
        &json!({
            "fit": fit,
            "baseline_type": k,
            "returns": returns,
            "return_std_errors": return_se,
            "note": GENERATED_REGRESSOR_NOTE,
        }),
        ctx,
    )
}

fn ics(a: &IcsArgs, ctx: &mut RunContext) -> CliResult<()> {
    ctx.record_input(&a.scores)?;
    ctx.config = json!({
        "base": posterior::ICS_BASE,
        "correction": posterior::ICS_CORRECTION,
    });
    let mut rdr = csv::Reader::from_path(&a.scores)?;
    let headers = rdr.headers()?.clone();
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let scores = (1..rec.len())
            .map(|c| parse_f64(&rec[c], r + 1, &headers[c]))
            .collect::<CliResult<Vec<f64>>>()?;
        let value = posterior::compute_ics(&scores).map_err(|e| match e {
            Error::InvalidParameter(m) => CliError::Core(Error::InvalidValue {
                row: r + 1,
                column: headers.get(1).unwrap_or("").to_string(),
                message: m,
            }),
            e => CliError::Core(e),
        })?;
        rows.push((rec[0].to_string(), value));
    }
    create_dir(&a.out)?;
    let mut w = csv_writer(&a.out, "ics.csv", ctx)?;
    w.write_record([headers.get(0).unwrap_or("label"), "ics"])?;
    for (label, v) in rows {
        w.write_record([label, v.to_string()])?;
    }
    finish(w)
}
