//! The five pipeline commands. Each reads the config, writes its artifacts
//! under the output directory, and returns a summary for the caller.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use ndebias::embedding_io::{
    load_adapter, load_embedding_set, load_projector, save_adapter, save_embedding_set, save_projector, save_rff_spec,
    split_dataset, Format, ProjectorRef,
};
use ndebias::gated_adapter::{adapter_outputs, hit_rates, train_adapter, EpochRecord, HitRates, PreparedContext};
use ndebias::inlp::{compose_projectors, fit_attribute_projector, CompositeProjector};
use ndebias::kernel_lift::{median_bandwidth, sample_rff, FeatureLift};
use ndebias::probes::audit_leakage;
use ndebias::synth::generate;
use ndebias::{AdapterParams, EmbeddingSet, LeakageReport, ProjectorRecord, ToyTaskHead};

use crate::config::PipelineConfig;
use crate::exit::CliError;
use crate::report::{render_report, ReportTable, StageRow};

pub const EMBEDDINGS_FILE: &str = "embeddings.ndbs";
pub const TRUTH_FILE: &str = "synth_truth.json";
pub const RFF_FILE: &str = "rff.ndrf";
pub const PROJECTOR_DIR: &str = "projectors";
pub const COMPOSITE_NAME: &str = "composite";
pub const DEBIASED_FILE: &str = "debiased.ndbs";
pub const FIT_LOG: &str = "fit.log";
pub const ADAPTER_FILE: &str = "adapter.ndad";
pub const TRACE_FILE: &str = "adapter_trace.csv";

/// Console output that `--quiet` silences.
#[derive(Debug, Clone, Copy)]
pub struct Console {
    pub quiet: bool,
}

impl Console {
    pub fn say(&self, line: impl AsRef<str>) {
        if !self.quiet {
            println!("{}", line.as_ref());
        }
    }
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir)
        .map_err(|e| CliError::validation(format!("output directory {} is not writable: {e}", dir.display())))
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = fs::File::create(path).map_err(|e| ndebias::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    f.write_all(text.as_bytes()).map_err(|e| {
        CliError::from(ndebias::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(anyhow::Error::from)?;
    text.push('\n');
    write_text(path, &text)
}

pub fn projector_path(out: &Path, name: &str) -> PathBuf {
    out.join(PROJECTOR_DIR).join(format!("{name}.ndpj"))
}

/// Loaded data with its deterministic split and the attributes in scope.
pub struct Workspace {
    pub set: EmbeddingSet,
    pub train: EmbeddingSet,
    pub val: EmbeddingSet,
    pub test: EmbeddingSet,
    pub attributes: Vec<String>,
}

impl Workspace {
    pub fn load(cfg: &PipelineConfig) -> Result<Self, CliError> {
        let path = cfg.embeddings_path();
        if !path.exists() {
            return Err(CliError::validation(format!(
                "embeddings not found: {}",
                path.display()
            )));
        }
        let set = load_embedding_set(&path, Format::from_path(&path))?;
        let attributes = if cfg.data.attributes.is_empty() {
            set.attributes().iter().map(|a| a.name.clone()).collect()
        } else {
            cfg.data.attributes.clone()
        };
        if attributes.is_empty() {
            return Err(CliError::validation("no attributes to process"));
        }
        for a in &attributes {
            set.attribute(a)?;
        }
        let (train, val, test) = split_dataset(&set, cfg.data.split, cfg.seed)?;
        Ok(Workspace {
            set,
            train,
            val,
            test,
            attributes,
        })
    }
}

/// Item embeddings from a JSON file with an `items` array of rows.
#[derive(Debug, Deserialize)]
struct ItemsFile {
    items: Vec<Vec<f64>>,
}

pub fn load_items(path: &Path, d: usize) -> Result<ToyTaskHead, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read items file {}: {e}", path.display())))?;
    let file: ItemsFile = serde_json::from_str(&text)
        .map_err(|e| CliError::validation(format!("bad items file {}: {e}", path.display())))?;
    if file.items.iter().any(|row| row.len() != d) {
        return Err(CliError::validation(format!(
            "items in {} must have width {d}",
            path.display()
        )));
    }
    let m = DMatrix::from_fn(file.items.len(), d, |i, j| file.items[i][j]);
    Ok(ToyTaskHead::new(m)?)
}

fn task_targets(set: &EmbeddingSet) -> Result<Vec<usize>, CliError> {
    set.task_labels()
        .map(|t| t.iter().map(|&v| v as usize).collect())
        .ok_or_else(|| CliError::validation("embedding file has no task labels"))
}

// ---------------------------------------------------------------- synth

#[derive(Debug, Clone, Serialize)]
pub struct SynthOutcome {
    pub embeddings: PathBuf,
    pub truth: PathBuf,
}

pub fn cmd_synth(cfg: &PipelineConfig, console: Console) -> Result<SynthOutcome, CliError> {
    ensure_dir(&cfg.out)?;
    let mut synth = cfg.synth.clone();
    synth.seed = synth.seed.wrapping_add(cfg.seed);
    let bundle = generate(&synth)?;
    let embeddings = cfg.out.join(EMBEDDINGS_FILE);
    let truth = cfg.out.join(TRUTH_FILE);
    save_embedding_set(&bundle.set, &embeddings, Format::Binary)?;
    write_json(&truth, &bundle.truth)?;
    console.say(format!(
        "synth: N={} d={} attributes={} items={} -> {}",
        synth.n,
        synth.d,
        synth.attributes.len(),
        synth.n_items,
        embeddings.display()
    ));
    Ok(SynthOutcome { embeddings, truth })
}

// ---------------------------------------------------------------- probe

pub fn audit_attribute(
    cfg: &PipelineConfig,
    ws: &Workspace,
    attribute: &str,
    x_train: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
) -> Result<LeakageReport, CliError> {
    let tr = ws.train.attribute(attribute)?;
    let te = ws.test.attribute(attribute)?;
    let mut mlp = cfg.inlp.audit_probe;
    mlp.seed = mlp.seed.wrapping_add(cfg.seed);
    Ok(audit_leakage(
        x_train,
        &tr.as_classes(),
        x_test,
        &te.as_classes(),
        tr.classes,
        attribute,
        &mlp,
    )?)
}

pub fn cmd_probe(cfg: &PipelineConfig, console: Console) -> Result<Vec<LeakageReport>, CliError> {
    let ws = Workspace::load(cfg)?;
    let dir = cfg.out.join("probe");
    ensure_dir(&dir)?;
    let (x_tr, x_te) = (ws.train.to_matrix(), ws.test.to_matrix());
    let mut reports = Vec::new();
    console.say(format!("{:<16} {:>7} {:>8}", "attribute", "classes", "gap"));
    for a in &ws.attributes {
        let rep = audit_attribute(cfg, &ws, a, &x_tr, &x_te)?;
        write_text(&dir.join(format!("{a}.txt")), &rep.to_string())?;
        console.say(format!("{:<16} {:>7} {:>8.4}", a, rep.classes(), rep.gap));
        reports.push(rep);
    }
    write_json(&dir.join("summary.json"), &reports)?;
    Ok(reports)
}

// ---------------------------------------------------------------- debias

#[derive(Debug, Clone, Serialize)]
pub struct AttributeSummary {
    pub attribute: String,
    pub achieved_gap: f64,
    pub refinements: usize,
    pub converged: bool,
    pub probe_count: usize,
    pub idempotence_defect: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct DebiasOutcome {
    pub sigma: Option<f64>,
    pub lift: String,
    pub attributes: Vec<AttributeSummary>,
    pub composite_kept_dim: usize,
    pub total_information_loss: bool,
}

pub fn build_lift(cfg: &PipelineConfig, x_train: &DMatrix<f64>) -> Result<(FeatureLift, Option<f64>), CliError> {
    if cfg.rff.dim == 0 {
        return Ok((FeatureLift::Backbone { eta: cfg.rff.eta }, None));
    }
    let sigma = match cfg.rff.sigma.fixed()? {
        Some(s) => s,
        None => median_bandwidth(x_train)?,
    };
    let spec = sample_rff(
        x_train.ncols(),
        cfg.rff.dim,
        sigma,
        cfg.rff.eta,
        cfg.rff.seed.wrapping_add(cfg.seed),
    )?;
    Ok((FeatureLift::Fourier(spec), Some(sigma)))
}

pub fn cmd_debias(cfg: &PipelineConfig, console: Console) -> Result<DebiasOutcome, CliError> {
    let ws = Workspace::load(cfg)?;
    ensure_dir(&cfg.out.join(PROJECTOR_DIR))?;
    let x_tr = ws.train.to_matrix();
    let (lift, sigma) = build_lift(cfg, &x_tr)?;
    if let FeatureLift::Fourier(spec) = &lift {
        save_rff_spec(spec, &cfg.out.join(RFF_FILE))?;
    }
    let mut log = String::new();
    let mut records = Vec::new();
    let mut summaries = Vec::new();
    for (k, a) in ws.attributes.iter().enumerate() {
        let seed = cfg.seed.wrapping_add(1 + k as u64);
        let fit = fit_attribute_projector(&ws.train, a, &lift, &cfg.inlp, seed)?;
        for e in &fit.log {
            log.push_str(&e.to_string());
            log.push('\n');
        }
        let rec = fit.record;
        save_projector(&rec, &projector_path(&cfg.out, a))?;
        console.say(format!(
            "debias: {a}: gap {:.4} after {} refinement(s), {} direction(s){}",
            rec.achieved_gap,
            rec.refinements,
            rec.probe_count,
            if rec.converged { "" } else { " [not converged]" }
        ));
        summaries.push(AttributeSummary {
            attribute: a.clone(),
            achieved_gap: rec.achieved_gap,
            refinements: rec.refinements,
            converged: rec.converged,
            probe_count: rec.probe_count,
            idempotence_defect: rec.idempotence_defect(),
        });
        records.push(rec);
    }
    write_text(&cfg.out.join(FIT_LOG), &log)?;
    let composite: CompositeProjector = compose_projectors(&records)?;
    if composite.total_information_loss {
        console.say("debias: warning: composite projector is zero (total information loss)");
    }
    let composite_rec = ProjectorRecord {
        attribute: COMPOSITE_NAME.into(),
        matrix: composite.matrix.clone(),
        probe_count: records.iter().map(|r| r.probe_count).sum(),
        achieved_gap: records.iter().map(|r| r.achieved_gap).fold(0.0, f64::max),
        rff_spec_id: lift.id(),
        refinements: records.iter().map(|r| r.refinements).max().unwrap_or(0),
        converged: records.iter().all(|r| r.converged),
    };
    save_projector(&composite_rec, &projector_path(&cfg.out, COMPOSITE_NAME))?;
    let debiased = ws.set.with_embeddings(&(ws.set.to_matrix() * &composite.matrix))?;
    save_embedding_set(&debiased, &cfg.out.join(DEBIASED_FILE), Format::Binary)?;
    let outcome = DebiasOutcome {
        sigma,
        lift: lift.id(),
        attributes: summaries,
        composite_kept_dim: composite.kept_dim,
        total_information_loss: composite.total_information_loss,
    };
    write_json(&cfg.out.join("debias.json"), &outcome)?;
    let failed: Vec<&str> = outcome
        .attributes
        .iter()
        .filter(|s| !s.converged)
        .map(|s| s.attribute.as_str())
        .collect();
    if !failed.is_empty() {
        return Err(CliError::NonConvergence(format!(
            "leakage gap above tau after {} refinements for: {}",
            cfg.inlp.max_refinements,
            failed.join(", ")
        )));
    }
    Ok(outcome)
}

// ---------------------------------------------------------------- train-adapter

#[derive(Debug, Clone, Serialize)]
pub struct AdapterOutcome {
    pub frozen_before: Vec<String>,
    pub frozen_after: Vec<String>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub epochs: usize,
    pub selected_epoch: usize,
    pub validation_loss: Option<f64>,
}

pub fn load_attribute_projectors(
    cfg: &PipelineConfig,
    attributes: &[String],
) -> Result<Vec<ProjectorRecord>, CliError> {
    let missing: Vec<String> = attributes
        .iter()
        .map(|a| projector_path(&cfg.out, a))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(CliError::validation(format!(
            "missing projector files: {}",
            missing.join(", ")
        )));
    }
    attributes
        .iter()
        .map(|a| Ok(load_projector(&projector_path(&cfg.out, a))?))
        .collect()
}

fn items_head(cfg: &PipelineConfig, d: usize) -> Result<ToyTaskHead, CliError> {
    let path = cfg.items_path().unwrap_or_else(|| cfg.out.join(TRUTH_FILE));
    if !path.exists() {
        return Err(CliError::validation(format!(
            "item embeddings not found: {}",
            path.display()
        )));
    }
    load_items(&path, d)
}

pub fn cmd_train_adapter(cfg: &PipelineConfig, console: Console) -> Result<AdapterOutcome, CliError> {
    let ws = Workspace::load(cfg)?;
    let records = load_attribute_projectors(cfg, &ws.attributes)?;
    let d = ws.set.d();
    let head = items_head(cfg, d)?;
    let targets = task_targets(&ws.train)?;
    let mut train_cfg = cfg.adapter.clone();
    train_cfg.seed = train_cfg.seed.wrapping_add(cfg.seed);
    let projectors: Vec<DMatrix<f64>> = records.iter().map(|r| r.matrix.clone()).collect();
    let init = AdapterParams::init(
        projectors,
        DMatrix::identity(d, d),
        train_cfg.rank,
        train_cfg.init_scale,
        train_cfg.seed,
    )?;
    let before = init.frozen_checksums();
    let contexts = PreparedContext::batch(&ws.train.to_matrix(), &targets, &init)?;
    let val_contexts = match ws.val.task_labels() {
        Some(_) => PreparedContext::batch(&ws.val.to_matrix(), &task_targets(&ws.val)?, &init)?,
        None => Vec::new(),
    };
    let trained = train_adapter(&contexts, Some(&val_contexts), &init, &head, &train_cfg)?;
    let after = trained.params.frozen_checksums();
    let hexes = |v: &[[u8; 32]]| v.iter().map(hex::encode).collect::<Vec<_>>();
    for (name, (b, a)) in ws
        .attributes
        .iter()
        .map(String::as_str)
        .chain(std::iter::once("O"))
        .zip(before.iter().zip(&after))
    {
        console.say(format!(
            "frozen {name}: before {} after {}",
            hex::encode(b),
            hex::encode(a)
        ));
    }
    if before != after {
        return Err(ndebias::Error::Invariant("frozen checksums changed during adapter training".into()).into());
    }
    let refs: Vec<ProjectorRef> = ws
        .attributes
        .iter()
        .zip(&trained.params.projectors)
        .map(|(a, m)| ProjectorRef::new(format!("{PROJECTOR_DIR}/{a}.ndpj"), m))
        .collect();
    save_adapter(&trained.params, &refs, &cfg.out.join(ADAPTER_FILE))?;
    let mut trace = EpochRecord::header(trained.params.k());
    trace.push('\n');
    for rec in &trained.trace {
        trace.push_str(&rec.to_string());
        trace.push('\n');
    }
    write_text(&cfg.out.join(TRACE_FILE), &trace)?;
    let outcome = AdapterOutcome {
        frozen_before: hexes(&before),
        frozen_after: hexes(&after),
        initial_loss: trained.trace[0].parts.total,
        final_loss: trained.trace.last().expect("trace has epoch 0").parts.total,
        epochs: train_cfg.epochs,
        selected_epoch: trained.selected_epoch,
        validation_loss: trained.trace[trained.selected_epoch].validation,
    };
    console.say(format!(
        "train-adapter: loss {:.4} -> {:.4} over {} epoch(s), kept epoch {}",
        outcome.initial_loss, outcome.final_loss, outcome.epochs, outcome.selected_epoch
    ));
    write_json(&cfg.out.join("adapter.json"), &outcome)?;
    Ok(outcome)
}

// ---------------------------------------------------------------- report

fn stage_row(
    cfg: &PipelineConfig,
    ws: &Workspace,
    stage: &str,
    x_tr: &DMatrix<f64>,
    x_te: &DMatrix<f64>,
    head: Option<&ToyTaskHead>,
) -> Result<StageRow, CliError> {
    let mut gaps = Vec::new();
    for a in &ws.attributes {
        gaps.push(Some(audit_attribute(cfg, ws, a, x_tr, x_te)?.gap));
    }
    let hits: Option<HitRates> = match (head, ws.test.task_labels()) {
        (Some(h), Some(_)) => Some(hit_rates(
            x_te,
            &task_targets(&ws.test)?,
            h.items(),
            &cfg.report.hit_ks,
            cfg.report.negatives,
            cfg.seed,
        )?),
        _ => None,
    };
    Ok(StageRow {
        stage: stage.to_string(),
        gaps,
        hits: hits.map(|h| h.rates),
    })
}

pub fn cmd_report(cfg: &PipelineConfig, console: Console) -> Result<ReportTable, CliError> {
    let ws = Workspace::load(cfg)?;
    let d = ws.set.d();
    let mut missing = Vec::new();
    let head = match items_head(cfg, d) {
        Ok(h) => Some(h),
        Err(_) => {
            missing.push("item embeddings (toy task)".to_string());
            None
        }
    };
    let (x_tr, x_te) = (ws.train.to_matrix(), ws.test.to_matrix());
    let mut rows = vec![stage_row(cfg, &ws, "before", &x_tr, &x_te, head.as_ref())?];

    let composite_path = projector_path(&cfg.out, COMPOSITE_NAME);
    if composite_path.exists() {
        let p = load_projector(&composite_path)?.matrix;
        rows.push(stage_row(
            cfg,
            &ws,
            "projected",
            &(&x_tr * &p),
            &(&x_te * &p),
            head.as_ref(),
        )?);
    } else {
        missing.push(format!("{PROJECTOR_DIR}/{COMPOSITE_NAME}.ndpj"));
        rows.push(StageRow::missing("projected", ws.attributes.len()));
    }

    let adapter_path = cfg.out.join(ADAPTER_FILE);
    if adapter_path.exists() {
        let (params, _) = load_adapter(&adapter_path)?;
        let y_tr = adapter_outputs(&params, &x_tr)?;
        let y_te = adapter_outputs(&params, &x_te)?;
        rows.push(stage_row(cfg, &ws, "adapter", &y_tr, &y_te, head.as_ref())?);
    } else {
        missing.push(ADAPTER_FILE.to_string());
        rows.push(StageRow::missing("adapter", ws.attributes.len()));
    }

    let table = ReportTable {
        attributes: ws.attributes.clone(),
        hit_ks: cfg.report.hit_ks.clone(),
        negatives: cfg.report.negatives,
        rows,
        missing,
    };
    let text = render_report(&table);
    write_text(&cfg.out.join("report.txt"), &text)?;
    write_json(&cfg.out.join("report.json"), &table)?;
    console.say(text.trim_end());
    Ok(table)
}
