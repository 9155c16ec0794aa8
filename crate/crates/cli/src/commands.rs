use crate::config::RunConfig;
use crate::{
    resolve_config, CliError, EvalArgs, ExplainArgs, GenArgs, LatentsArgs, NoiseLibArgs, ReportArgs, Subset, TrainArgs,
};
use sourcenet_core::catalog::{apply_catalog, parse_catalog};
use sourcenet_core::container::{read_dataset, read_noise, write_dataset, write_noise};
use sourcenet_core::features::EventRecord;
use sourcenet_core::forward::load_station_list;
use sourcenet_core::generate::{generate_dataset, GenContext, GenSummary};
use sourcenet_core::psdr::{build_noise_library, NoiseLibrary};
use sourcenet_core::rng::{derive_rng, streams};
use sourcenet_core::{assets, Domain};
use sourcenet_nn::checkpoint::Checkpoint;
use sourcenet_nn::model::Variant;
use sourcenet_train::evalx::{
    azimuth_profile, evaluate, gradcam, latents_csv, metrics_csv, parse_metrics_csv, render_gradcam, render_report,
    AttentionSource, AzimuthProfile, CamTarget, ReportInput,
};
use sourcenet_train::{run_stage, Init, Model, Split, Stage};
use std::path::Path;

/// `println!` that tolerates a closed stdout, e.g. output piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Generation runs fail when more than this fraction of events cannot be
/// simulated.
pub const MAX_FAILURE_RATE: f64 = 0.1;
const REPORT_BEACHBALLS: usize = 12;

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

pub fn noise_library(cfg: &RunConfig) -> NoiseLibrary {
    build_noise_library(&cfg.noise, &mut derive_rng(cfg.seed, streams::NOISE, 0))
}

/// Simulates `n` events with the config's region, network and randomization.
/// `jobs == 1` runs serially; the output does not depend on `jobs`.
pub fn generate(
    cfg: &RunConfig,
    n: usize,
    domain: Domain,
    noise: Option<NoiseLibrary>,
    jobs: usize,
) -> Result<(Vec<EventRecord>, GenSummary), CliError> {
    let network = match &cfg.stations.file {
        Some(f) => {
            let path = Path::new(f);
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            load_station_list(&text).map_err(|e| CliError::io(path, e))?
        }
        None => assets::stations(),
    };
    let noise = noise.unwrap_or_else(|| noise_library(cfg));
    let ctx = GenContext::new(
        cfg.region.clone(),
        cfg.stations.clone(),
        network,
        assets::base_model(),
        noise,
        cfg.sim,
        cfg.psdr.clone(),
        cfg.seed,
    );
    let (records, summary) = if jobs == 1 {
        generate_dataset(&ctx, cfg.seed, n, domain, false)
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
        pool.install(|| generate_dataset(&ctx, cfg.seed, n, domain, true))
    };
    if summary.failure_rate() > MAX_FAILURE_RATE || (n > 0 && records.is_empty()) {
        return Err(CliError::Numeric(format!(
            "{} of {} events failed to simulate",
            summary.failures, summary.requested
        )));
    }
    Ok((records, summary))
}

pub fn gen(a: &GenArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.common)?;
    let domain: Domain = a.domain.parse().map_err(CliError::Usage)?;
    if domain == Domain::Real {
        return Err(CliError::Usage(
            "real data cannot be generated; use --catalog with supplied waveforms".into(),
        ));
    }
    let noise = a
        .noise
        .as_deref()
        .map(|p| read_noise(p).map_err(|e| CliError::io(p, e)))
        .transpose()?;
    let (records, summary) = generate(&cfg, a.n, domain, noise, a.jobs)?;
    write_dataset(&a.out, &records).map_err(|e| CliError::io(&a.out, e))?;
    out!(
        "wrote {} {} events to {} ({} failed)",
        records.len(),
        domain.name(),
        a.out.display(),
        summary.failures
    );
    out!("stations  events");
    for (k, c) in &summary.station_hist {
        out!("{k:>8}  {c}");
    }
    Ok(())
}

pub fn noise_lib(a: &NoiseLibArgs) -> Result<(), CliError> {
    let cfg = resolve_config(&a.common)?;
    let lib = noise_library(&cfg);
    write_noise(&a.out, &lib).map_err(|e| CliError::io(&a.out, e))?;
    out!("wrote {} noise records to {}", lib.records.len(), a.out.display());
    Ok(())
}

fn load_records(data: &Path, catalog: Option<&Path>) -> Result<Vec<EventRecord>, CliError> {
    let records = read_dataset(data).map_err(|e| CliError::io(data, e))?;
    match catalog {
        None => Ok(records),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            let cat = parse_catalog(&text).map_err(|e| CliError::io(p, e))?;
            apply_catalog(&records, &cat).map_err(|e| CliError::io(p, e))
        }
    }
}

pub fn train(a: &TrainArgs, stage: Stage) -> Result<(), CliError> {
    let cfg = resolve_config(&a.common)?;
    let mut tc = match stage {
        Stage::Pretrain => cfg.train.pretrain.clone(),
        Stage::Finetune => cfg.train.finetune.clone(),
    };
    if let Some(e) = a.epochs {
        tc.max_epochs = Some(e);
    }
    let variant = a
        .variant
        .as_deref()
        .map(str::parse::<Variant>)
        .transpose()
        .map_err(CliError::Usage)?;
    let init = if a.resume {
        let last = a.out.join("last.snck");
        Init::Resume(Checkpoint::load(&last).map_err(|e| CliError::io(&last, e))?)
    } else if let Some(ck) = &a.ckpt {
        if variant.is_some() {
            return Err(CliError::Usage("--variant only applies to a fresh model".into()));
        }
        Init::From(Checkpoint::load(ck).map_err(|e| CliError::io(ck, e))?)
    } else if stage == Stage::Finetune {
        return Err(CliError::Usage("finetune needs a starting checkpoint (--ckpt)".into()));
    } else {
        let model = cfg.model.clone();
        Init::Fresh(match variant {
            Some(v) => model.with_variant(v),
            None => model,
        })
    };
    let records = load_records(&a.data, a.catalog.as_deref())?;
    create_dir(&a.out)?;
    let out = run_stage(&records, &tc, init, Some(&a.out))?;
    let best = out
        .history
        .iter()
        .min_by(|x, y| x.val_loss.total_cmp(&y.val_loss))
        .ok_or_else(|| CliError::Usage("no epochs were run".into()))?;
    out!(
        "{}: {} epochs, best epoch {} val_loss {:.5} val_kagan {:.2} val_mw_mae {:.4}",
        stage.name(),
        out.history.len(),
        best.epoch,
        best.val_loss,
        best.val_kagan_mean,
        best.val_mw_mae
    );
    Ok(())
}

fn load_model(path: &Path) -> Result<(Checkpoint, Model), CliError> {
    let ck = Checkpoint::load(path).map_err(|e| CliError::io(path, e))?;
    let model = Model::from_checkpoint(&ck)?;
    Ok((ck, model))
}

fn subset<'a>(ck: &Checkpoint, records: &'a [EventRecord], which: Subset) -> Result<Vec<&'a EventRecord>, CliError> {
    if which == Subset::All {
        return Ok(records.iter().collect());
    }
    let split: Split = ck
        .meta
        .get("split")
        .cloned()
        .and_then(|v| serde_json::from_value(v).ok())
        .ok_or_else(|| CliError::Usage("checkpoint carries no data split".into()))?;
    let idx = match which {
        Subset::Train => split.train,
        Subset::Val => split.val,
        _ => split.test,
    };
    idx.iter()
        .map(|&i| {
            records.get(i).ok_or_else(|| {
                CliError::Usage(format!(
                    "split index {i} exceeds the dataset ({} events)",
                    records.len()
                ))
            })
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<(), CliError> {
    let (ck, model) = load_model(&a.ckpt)?;
    let records = load_records(&a.data, a.catalog.as_deref())?;
    let refs = subset(&ck, &records, a.subset)?;
    let (report, preds) = evaluate(&model, &refs)?;
    create_dir(&a.out)?;
    write_file(&a.out.join("metrics.csv"), metrics_csv(&report))?;
    let summary = serde_json::json!({
        "n": report.n,
        "mw_mae": report.mw_mae,
        "dev_mae": report.dev_mae,
        "dev_mae_mean": report.dev_mae_mean,
        "kagan_mean": report.kagan_mean,
        "kagan_median": report.kagan_median,
        "kagan_hist": report.kagan_hist,
    });
    write_file(&a.out.join("summary.json"), format!("{summary:#}\n"))?;
    let source = if a.self_attention {
        AttentionSource::SelfAttention
    } else {
        AttentionSource::Pooling
    };
    let profile = match azimuth_profile(&refs, &preds, source) {
        Ok(p) => {
            let text = serde_json::to_string_pretty(&p).map_err(|e| CliError::Io(e.to_string()))?;
            write_file(&a.out.join("azimuth.json"), text + "\n")?;
            Some(p)
        }
        Err(e) => {
            log::warn!("no azimuth profile: {e}");
            None
        }
    };
    let pairs = report
        .rows
        .iter()
        .take(REPORT_BEACHBALLS)
        .map(|r| (r.id.clone(), r.truth, r.pred))
        .collect();
    let svg = render_report(&ReportInput {
        title: format!("{} ({} events)", a.data.display(), report.n),
        metrics: Some(&report),
        profile: profile.as_ref(),
        pairs,
    });
    write_file(&a.out.join("report.svg"), svg)?;
    out!(
        "{} events: kagan mean {:.2} median {:.2}, mw_mae {:.4}, dev_mae {:.4}",
        report.n,
        report.kagan_mean,
        report.kagan_median,
        report.mw_mae,
        report.dev_mae_mean
    );
    Ok(())
}

fn parse_target(s: &str) -> Result<CamTarget, CliError> {
    match s {
        "mw" => Ok(CamTarget::Mw),
        _ => s
            .strip_prefix("dev")
            .and_then(|k| k.parse::<usize>().ok())
            .filter(|k| (1..=5).contains(k))
            .map(|k| CamTarget::Dev(k - 1))
            .ok_or_else(|| CliError::Usage(format!("unknown target {s:?}; use mw or dev1..dev5"))),
    }
}

pub fn explain(a: &ExplainArgs) -> Result<(), CliError> {
    let target = parse_target(&a.target)?;
    let (_, model) = load_model(&a.ckpt)?;
    let records = read_dataset(&a.data).map_err(|e| CliError::io(&a.data, e))?;
    let rec = records
        .iter()
        .find(|r| r.id == a.event)
        .ok_or_else(|| CliError::Usage(format!("unknown event id {:?}", a.event)))?;
    let stations: Vec<usize> = match a.station {
        Some(k) if k >= rec.stations.len() => {
            return Err(CliError::Usage(format!(
                "station {k} out of range; event {} has {} stations",
                rec.id,
                rec.stations.len()
            )))
        }
        Some(k) => vec![k],
        None => (0..rec.stations.len()).collect(),
    };
    create_dir(&a.out)?;
    let t = rec.window;
    for k in stations {
        let cam = gradcam(&model, rec, k, target)?;
        let st = &rec.stations[k];
        let title = format!(
            "{} station {k} (az {:.0}°, {:.0} km) target {}",
            rec.id, st.azimuth, st.dist, a.target
        );
        let path = a.out.join(format!("{}_st{k:02}.svg", rec.id));
        write_file(&path, render_gradcam(&title, &cam, &st.p_win[..t], &st.s_win[..t]))?;
    }
    out!("wrote Grad-CAM for event {} to {}", rec.id, a.out.display());
    Ok(())
}

pub fn latents(a: &LatentsArgs) -> Result<(), CliError> {
    let (_, model) = load_model(&a.ckpt)?;
    let records = read_dataset(&a.data).map_err(|e| CliError::io(&a.data, e))?;
    let refs: Vec<&EventRecord> = records.iter().collect();
    let preds = model.predict(&refs, 32)?;
    write_file(&a.out, latents_csv(&refs, &preds))?;
    out!("wrote {} latent rows to {}", refs.len(), a.out.display());
    Ok(())
}

pub fn report(a: &ReportArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&a.metrics).map_err(|e| CliError::io(&a.metrics, e))?;
    let metrics = parse_metrics_csv(&text)?;
    let profile: Option<AzimuthProfile> = match &a.profile {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            Some(serde_json::from_str(&text).map_err(|e| CliError::io(p, e))?)
        }
        None => None,
    };
    let pairs = metrics
        .rows
        .iter()
        .take(REPORT_BEACHBALLS)
        .map(|r| (r.id.clone(), r.truth, r.pred))
        .collect();
    let svg = render_report(&ReportInput {
        title: a.title.clone(),
        metrics: Some(&metrics),
        profile: profile.as_ref(),
        pairs,
    });
    write_file(&a.out, svg)?;
    out!("wrote {}", a.out.display());
    Ok(())
}
