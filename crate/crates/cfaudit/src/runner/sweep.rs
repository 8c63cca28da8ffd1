//! The experiment sweep: for every configured dataset, generate data, train
//! the generator and the classifier pool, compute the interventional ground
//! truth and all three tests per classifier, and emit one `results.csv` row
//! per (dataset, classifier) cell.
//!
//! Every expensive artifact (spec, data, generator bundle, classifiers) is
//! persisted under the output directory and reloaded on rerun, and finished
//! cells are skipped by key, so an interrupted sweep resumes where it
//! stopped. `results.csv` is rewritten at the end from the full sorted row
//! set, so its bytes depend only on the configuration and master seed —
//! wall-clock timings go to a `timings.csv` sidecar instead.

use std::collections::BTreeMap;
use std::fs::{self, OpenOptions};
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{dp_test, eo_test, BaselineReport};
use crate::citest::{build_sample_bank, CitConfig, TestReport};
use crate::generative::{train_bundle, GenerativeBundle};
use crate::numerics::RngStream;
use crate::report::{append_jsonl, report_path};
use crate::runner::config::ExperimentConfig;
use crate::runner::derive_seed;
use crate::scm::eca::{eca_many, EcaEstimate};
use crate::scm::{LabeledDataset, ScmSpec, Variant};
use crate::store::ClassifierStore;
use crate::zoo::{accuracy, train, ClassifierSpec, Family, Predictor, TrainedClassifier};
use crate::{Error, Result};

pub const RESULTS_HEADER: &str = "dataset,family,seed,classifier,status,eca,eca_max_se,\
acc_train,acc_test,t_citlr,p_citlr,degenerate_citlr,p_dp,degenerate_dp,p_eo,degenerate_eo";

const STATUS_OK: &str = "ok";
const MANIFEST_VERSION: u32 = 1;

/// One (dataset, classifier) cell of the sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dataset: String,
    pub family: String,
    pub seed: u64,
    pub classifier: String,
    /// "ok", or the error message of the stage that failed.
    pub status: String,
    pub eca: Option<f64>,
    pub eca_max_se: Option<f64>,
    pub acc_train: Option<f64>,
    pub acc_test: Option<f64>,
    pub t_citlr: Option<f64>,
    pub p_citlr: Option<f64>,
    pub degenerate_citlr: Option<bool>,
    pub p_dp: Option<f64>,
    pub degenerate_dp: Option<bool>,
    pub p_eo: Option<f64>,
    pub degenerate_eo: Option<bool>,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    fn errored(dataset: &str, family: Family, seed: u64, err: &Error) -> Self {
        // Keep records one line each: the CSV quotes commas and quotes but
        // not newlines.
        let status = err.to_string().replace(['\n', '\r'], "; ");
        SweepRow {
            dataset: dataset.to_string(),
            family: family.name().to_string(),
            seed,
            classifier: format!("{}_{}", family.name(), seed),
            status,
            eca: None,
            eca_max_se: None,
            acc_train: None,
            acc_test: None,
            t_citlr: None,
            p_citlr: None,
            degenerate_citlr: None,
            p_dp: None,
            degenerate_dp: None,
            p_eo: None,
            degenerate_eo: None,
        }
    }

    fn to_csv_line(&self) -> String {
        let cells = [
            quote_csv(&self.dataset),
            quote_csv(&self.family),
            self.seed.to_string(),
            quote_csv(&self.classifier),
            quote_csv(&self.status),
            opt_f64(self.eca),
            opt_f64(self.eca_max_se),
            opt_f64(self.acc_train),
            opt_f64(self.acc_test),
            opt_f64(self.t_citlr),
            opt_f64(self.p_citlr),
            opt_bool(self.degenerate_citlr),
            opt_f64(self.p_dp),
            opt_bool(self.degenerate_dp),
            opt_f64(self.p_eo),
            opt_bool(self.degenerate_eo),
        ];
        cells.join(",")
    }

    fn from_csv_line(line: &str, lineno: usize, path: &str) -> Result<Self> {
        let err = |msg: String| Error::Parse {
            path: path.to_string(),
            msg: format!("line {lineno}: {msg}"),
        };
        let fields = split_csv_line(line).map_err(|m| err(m))?;
        if fields.len() != 16 {
            return Err(err(format!("expected 16 fields, got {}", fields.len())));
        }
        let seed: u64 = fields[2]
            .parse()
            .map_err(|e| err(format!("seed: {e}")))?;
        let f64_at = |i: usize| -> Result<Option<f64>> {
            if fields[i].is_empty() {
                return Ok(None);
            }
            fields[i]
                .parse::<f64>()
                .map(Some)
                .map_err(|e| err(format!("field {}: {e}", i + 1)))
        };
        let bool_at = |i: usize| -> Result<Option<bool>> {
            match fields[i].as_str() {
                "" => Ok(None),
                "0" => Ok(Some(false)),
                "1" => Ok(Some(true)),
                other => Err(err(format!("field {}: expected 0/1, got `{other}`", i + 1))),
            }
        };
        Ok(SweepRow {
            dataset: fields[0].clone(),
            family: fields[1].clone(),
            seed,
            classifier: fields[3].clone(),
            status: fields[4].clone(),
            eca: f64_at(5)?,
            eca_max_se: f64_at(6)?,
            acc_train: f64_at(7)?,
            acc_test: f64_at(8)?,
            t_citlr: f64_at(9)?,
            p_citlr: f64_at(10)?,
            degenerate_citlr: bool_at(11)?,
            p_dp: f64_at(12)?,
            degenerate_dp: bool_at(13)?,
            p_eo: f64_at(14)?,
            degenerate_eo: bool_at(15)?,
        })
    }
}

fn opt_f64(v: Option<f64>) -> String {
    // Shortest round-trip formatting: stable bytes for a given value and
    // exact recovery through str::parse.
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn opt_bool(v: Option<bool>) -> String {
    v.map(|b| if b { "1" } else { "0" }.to_string()).unwrap_or_default()
}

fn quote_csv(s: &str) -> String {
    if s.contains(',') || s.contains('"') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Split one CSV record. Records never span lines: writers strip newlines
/// from free-text fields before quoting.
fn split_csv_line(line: &str) -> std::result::Result<Vec<String>, String> {
    let mut fields = Vec::new();
    let mut cur = String::new();
    let mut chars = line.chars().peekable();
    let mut in_quotes = false;
    // A quoted field must be followed directly by a separator or the end.
    let mut closed_quote = false;
    while let Some(c) = chars.next() {
        if in_quotes {
            match c {
                '"' if chars.peek() == Some(&'"') => {
                    chars.next();
                    cur.push('"');
                }
                '"' => {
                    in_quotes = false;
                    closed_quote = true;
                }
                _ => cur.push(c),
            }
        } else {
            match c {
                ',' => {
                    fields.push(std::mem::take(&mut cur));
                    closed_quote = false;
                }
                _ if closed_quote => {
                    return Err("content after closing quote".into());
                }
                '"' if cur.is_empty() => in_quotes = true,
                '"' => return Err("stray quote inside unquoted field".into()),
                _ => cur.push(c),
            }
        }
    }
    if in_quotes {
        return Err("unterminated quoted field".into());
    }
    fields.push(cur);
    Ok(fields)
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

impl SweepResult {
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from(RESULTS_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.to_csv_line());
            out.push('\n');
        }
        out
    }

    pub fn from_csv_str(text: &str, path: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, header)) if header == RESULTS_HEADER => {}
            Some((_, header)) => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    msg: format!("unexpected header `{header}`"),
                })
            }
            None => {
                return Err(Error::Parse {
                    path: path.to_string(),
                    msg: "empty file".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            rows.push(SweepRow::from_csv_line(line, i + 1, path)?);
        }
        Ok(SweepResult { rows })
    }

    pub fn read_csv(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
        SweepResult::from_csv_str(&text, &path.display().to_string())
    }

    pub fn error_row_count(&self) -> usize {
        self.rows.iter().filter(|r| !r.is_ok()).count()
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SweepManifest {
    format_version: u32,
    config_hash: String,
    seed: u64,
}

/// Generated inputs for one dataset: the causal specification and its
/// train/test splits, persisted under `datasets/<name>/`.
pub struct DatasetArtifacts {
    pub variant: Variant,
    pub spec: ScmSpec,
    pub train: LabeledDataset,
    pub test: LabeledDataset,
}

fn dataset_dir(cfg: &ExperimentConfig, variant: Variant) -> PathBuf {
    cfg.out_dir.join("datasets").join(variant.name())
}

/// Generate (or reload) the specification and data splits for one dataset.
pub fn prepare_data(cfg: &ExperimentConfig, variant: Variant) -> Result<DatasetArtifacts> {
    let dir = dataset_dir(cfg, variant);
    fs::create_dir_all(&dir).map_err(Error::io_at(&dir))?;
    let ds = variant.name();

    let spec = ScmSpec::generate(
        variant,
        cfg.chain_len,
        cfg.feature_dim,
        cfg.noise_scale,
        cfg.attr_prior,
        false,
        derive_seed(cfg.seed, &format!("scm/{ds}")),
    )?;
    let spec_path = dir.join("spec.toml");
    if spec_path.exists() {
        let existing = fs::read_to_string(&spec_path).map_err(Error::io_at(&spec_path))?;
        if existing != spec.to_spec_file_string()? {
            return Err(Error::Config(format!(
                "{} does not match this configuration; the output directory \
                 holds artifacts from a different run",
                spec_path.display()
            )));
        }
    } else {
        spec.save_spec_file(&spec_path)?;
    }

    let data_seed = derive_seed(cfg.seed, &format!("data/{ds}"));
    let load_split = |name: &str, rows: usize| -> Result<LabeledDataset> {
        let path = dir.join(format!("{name}.csv"));
        if path.exists() {
            LabeledDataset::read_csv(&path)
        } else {
            let data = spec.sample_dataset(rows, data_seed, name)?;
            data.write_csv(&path)?;
            Ok(data)
        }
    };
    let train = load_split("train", cfg.n_train)?;
    let test = load_split("test", cfg.n_test)?;
    Ok(DatasetArtifacts {
        variant,
        spec,
        train,
        test,
    })
}

/// Train (or reload) the generator for one dataset, persisted under
/// `bundles/<name>/`.
pub fn prepare_bundle(
    cfg: &ExperimentConfig,
    variant: Variant,
    train_data: &LabeledDataset,
) -> Result<GenerativeBundle> {
    let dir = cfg.out_dir.join("bundles").join(variant.name());
    if dir.join("bundle.json").exists() {
        return GenerativeBundle::load(&dir);
    }
    let mut rng = RngStream::new(
        derive_seed(cfg.seed, &format!("bundle/{}", variant.name())),
        "bundle",
    );
    let (bundle, _trace) = train_bundle(train_data, &cfg.bundle_config(), &mut rng)?;
    bundle.save(&dir)?;
    Ok(bundle)
}

/// Train (or reload) one pool classifier, persisted via the model store.
pub fn prepare_classifier(
    cfg: &ExperimentConfig,
    variant: Variant,
    train_data: &LabeledDataset,
    family: Family,
    seed: u64,
) -> Result<TrainedClassifier> {
    let store = ClassifierStore::new(&cfg.out_dir);
    if let Ok(clf) = store.load(variant.name(), family, seed) {
        return Ok(clf);
    }
    let clf = train(&ClassifierSpec { family, seed }, train_data)?;
    store.save(variant.name(), &clf)?;
    Ok(clf)
}

/// Append-only sink for stage wall times. Timings are the one output that
/// cannot be deterministic, so they live outside `results.csv`.
struct TimingSink {
    path: PathBuf,
}

impl TimingSink {
    fn new(out_dir: &Path) -> Result<Self> {
        let path = out_dir.join("timings.csv");
        if !path.exists() {
            fs::write(&path, "dataset,stage,seconds\n").map_err(Error::io_at(&path))?;
        }
        Ok(TimingSink { path })
    }

    fn record(&self, dataset: &str, stage: &str, seconds: f64) -> Result<()> {
        let mut file = OpenOptions::new()
            .append(true)
            .open(&self.path)
            .map_err(Error::io_at(&self.path))?;
        writeln!(file, "{},{},{:.3}", quote_csv(dataset), stage, seconds)
            .map_err(Error::io_at(&self.path))?;
        Ok(())
    }
}

fn append_partial(path: &Path, row: &SweepRow) -> Result<()> {
    let mut file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(Error::io_at(path))?;
    writeln!(file, "{}", row.to_csv_line()).map_err(Error::io_at(path))?;
    file.flush().map_err(Error::io_at(path))?;
    Ok(())
}

/// Create the output directory and verify it belongs to this
/// configuration, claiming it on first use. Every artifact-producing
/// entry point calls this before touching the directory.
pub fn claim_out_dir(cfg: &ExperimentConfig) -> Result<()> {
    fs::create_dir_all(&cfg.out_dir).map_err(Error::io_at(&cfg.out_dir))?;
    check_manifest(cfg)
}

/// Verify the output directory belongs to this configuration, claiming it
/// on first use.
fn check_manifest(cfg: &ExperimentConfig) -> Result<()> {
    let path = cfg.out_dir.join("manifest.json");
    let hash = cfg.hash();
    if path.exists() {
        let text = fs::read_to_string(&path).map_err(Error::io_at(&path))?;
        let manifest: SweepManifest = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            msg: e.to_string(),
        })?;
        if manifest.config_hash != hash {
            return Err(Error::Config(format!(
                "output directory {} was produced by a different configuration \
                 (manifest hash {}, this config {}); pick a fresh --out or delete it",
                cfg.out_dir.display(),
                &manifest.config_hash[..12],
                &hash[..12],
            )));
        }
        return Ok(());
    }
    let manifest = SweepManifest {
        format_version: MANIFEST_VERSION,
        config_hash: hash,
        seed: cfg.seed,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(&path, text).map_err(Error::io_at(&path))?;
    let cfg_path = cfg.out_dir.join("config.used.toml");
    fs::write(&cfg_path, cfg.to_toml_string()?).map_err(Error::io_at(&cfg_path))?;
    Ok(())
}

/// Everything the per-classifier stage produced for one cell.
struct CellOutput {
    row: SweepRow,
    cit: Option<TestReport>,
    dp: Option<BaselineReport>,
    eo: Option<BaselineReport>,
}

fn evaluate_cell(
    clf: &TrainedClassifier,
    eca: &EcaEstimate,
    bank: &crate::citest::SampleBank,
    arts: &DatasetArtifacts,
    alpha: f64,
) -> CellOutput {
    let ds = arts.variant.name();
    let mut row = SweepRow {
        dataset: ds.to_string(),
        family: clf.family.name().to_string(),
        seed: clf.seed,
        classifier: clf.id(),
        status: STATUS_OK.to_string(),
        eca: Some(eca.value),
        eca_max_se: Some(eca.max_se),
        acc_train: None,
        acc_test: None,
        t_citlr: None,
        p_citlr: None,
        degenerate_citlr: None,
        p_dp: None,
        degenerate_dp: None,
        p_eo: None,
        degenerate_eo: None,
    };
    let mut run = || -> Result<(TestReport, BaselineReport, BaselineReport)> {
        row.acc_train = Some(accuracy(clf, &arts.train)?);
        row.acc_test = Some(accuracy(clf, &arts.test)?);
        let cit = bank.evaluate(clf)?;
        let dp = dp_test(clf, &arts.test, alpha)?;
        let eo = eo_test(clf, &arts.test, alpha)?;
        Ok((cit, dp, eo))
    };
    match run() {
        Ok((cit, dp, eo)) => {
            row.t_citlr = Some(cit.t_stat);
            row.p_citlr = Some(cit.p_value);
            row.degenerate_citlr = Some(cit.degenerate);
            row.p_dp = Some(dp.p_value);
            row.degenerate_dp = Some(dp.degenerate);
            row.p_eo = Some(eo.p_value);
            row.degenerate_eo = Some(eo.degenerate);
            CellOutput {
                row,
                cit: Some(cit),
                dp: Some(dp),
                eo: Some(eo),
            }
        }
        Err(e) => {
            row.status = e.to_string().replace(['\n', '\r'], "; ");
            CellOutput {
                row,
                cit: None,
                dp: None,
                eo: None,
            }
        }
    }
}

/// Run the full sweep described by the configuration. Completed cells found
/// in the output directory are skipped; per-cell failures are recorded in
/// their rows and do not stop the sweep.
pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepResult> {
    cfg.validate()?;
    claim_out_dir(cfg)?;
    let timings = TimingSink::new(&cfg.out_dir)?;

    let partial_path = cfg.out_dir.join("results.partial.csv");
    let mut done: BTreeMap<(String, String), SweepRow> = BTreeMap::new();
    if partial_path.exists() {
        let text = fs::read_to_string(&partial_path).map_err(Error::io_at(&partial_path))?;
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let row =
                SweepRow::from_csv_line(line, i + 1, &partial_path.display().to_string())?;
            done.insert((row.dataset.clone(), row.classifier.clone()), row);
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("worker pool: {e}")))?;

    let families = cfg.family_list()?;
    let specs: Vec<(Family, u64)> = families
        .iter()
        .flat_map(|&f| cfg.zoo_seeds.iter().map(move |&s| (f, s)))
        .collect();

    for variant in cfg.variants()? {
        let ds = variant.name();
        let missing: Vec<(Family, u64)> = specs
            .iter()
            .copied()
            .filter(|(f, s)| {
                !done.contains_key(&(ds.to_string(), format!("{}_{}", f.name(), s)))
            })
            .collect();
        if missing.is_empty() {
            continue;
        }
        let outputs = run_dataset(cfg, variant, &missing, &timings, &pool);
        let rows: Vec<SweepRow> = match outputs {
            Ok(cells) => {
                for cell in &cells {
                    if let Some(r) = &cell.cit {
                        append_jsonl(&report_path(&cfg.out_dir, ds, &r.method), r)?;
                    }
                    if let Some(r) = &cell.dp {
                        append_jsonl(&report_path(&cfg.out_dir, ds, &r.method), r)?;
                    }
                    if let Some(r) = &cell.eo {
                        append_jsonl(&report_path(&cfg.out_dir, ds, &r.method), r)?;
                    }
                }
                cells.into_iter().map(|c| c.row).collect()
            }
            // A dataset-stage failure annotates every outstanding cell of
            // this dataset; the sweep moves on.
            Err(e) => missing
                .iter()
                .map(|&(f, s)| SweepRow::errored(ds, f, s, &e))
                .collect(),
        };
        for row in rows {
            append_partial(&partial_path, &row)?;
            done.insert((row.dataset.clone(), row.classifier.clone()), row);
        }
    }

    let mut rows: Vec<SweepRow> = done.into_values().collect();
    rows.sort_by(|a, b| {
        (&a.dataset, &a.family, a.seed).cmp(&(&b.dataset, &b.family, b.seed))
    });
    let result = SweepResult { rows };

    let final_path = cfg.out_dir.join("results.csv");
    let tmp_path = cfg.out_dir.join("results.csv.tmp");
    fs::write(&tmp_path, result.to_csv_string()).map_err(Error::io_at(&tmp_path))?;
    fs::rename(&tmp_path, &final_path).map_err(Error::io_at(&final_path))?;
    Ok(result)
}

fn run_dataset(
    cfg: &ExperimentConfig,
    variant: Variant,
    missing: &[(Family, u64)],
    timings: &TimingSink,
    pool: &rayon::ThreadPool,
) -> Result<Vec<CellOutput>> {
    let ds = variant.name();

    let t = Instant::now();
    let arts = prepare_data(cfg, variant)?;
    timings.record(ds, "data", t.elapsed().as_secs_f64())?;

    let t = Instant::now();
    let bundle = prepare_bundle(cfg, variant, &arts.train)?;
    timings.record(ds, "bundle", t.elapsed().as_secs_f64())?;

    let t = Instant::now();
    let classifiers: Vec<TrainedClassifier> = missing
        .iter()
        .map(|&(f, s)| prepare_classifier(cfg, variant, &arts.train, f, s))
        .collect::<Result<_>>()?;
    timings.record(ds, "zoo", t.elapsed().as_secs_f64())?;

    let t = Instant::now();
    let eca_params = cfg.eca;
    let predictor_refs: Vec<&dyn Predictor> =
        classifiers.iter().map(|c| c as &dyn Predictor).collect();
    let ecas = eca_many(
        &arts.spec,
        &predictor_refs,
        &eca_params,
        derive_seed(cfg.seed, &format!("eca/{ds}")),
    )?;
    timings.record(ds, "eca", t.elapsed().as_secs_f64())?;

    let t = Instant::now();
    let cit_cfg = CitConfig {
        seed: derive_seed(cfg.seed, &format!("cit/{ds}")),
        ..cfg.cit.clone()
    };
    let bank = build_sample_bank(&bundle, &arts.test, &cit_cfg)?;
    timings.record(ds, "bank", t.elapsed().as_secs_f64())?;

    let t = Instant::now();
    let outputs: Vec<CellOutput> = pool.install(|| {
        classifiers
            .par_iter()
            .zip(ecas.par_iter())
            .map(|(clf, eca)| evaluate_cell(clf, eca, &bank, &arts, cfg.cit.alpha))
            .collect()
    });
    timings.record(ds, "evaluate", t.elapsed().as_secs_f64())?;
    Ok(outputs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generative::BundleConfig;

    fn tiny_config(out: &Path) -> ExperimentConfig {
        let mut generative = BundleConfig::default();
        generative.vae.latent_dim = 2;
        generative.vae.hidden = vec![8];
        generative.vae.epochs = 2;
        generative.disentangle.perturb_hidden = vec![4];
        generative.disentangle.critic_hidden = vec![8];
        generative.disentangle.phi_steps = 2;
        generative.denoiser.hidden = vec![8];
        generative.denoiser.epochs = 2;
        let mut cfg = ExperimentConfig::desk();
        cfg.datasets = vec!["linear".into(), "sin".into()];
        cfg.feature_dim = 2;
        cfg.chain_len = 1;
        cfg.n_train = 96;
        // Big enough that both attribute groups clear the baselines' 8-row
        // floor and every (y, a) stratum is populated.
        cfg.n_test = 64;
        cfg.families = vec!["logistic".into()];
        cfg.zoo_seeds = vec![0, 1];
        cfg.generative = generative;
        cfg.cit.n_mc = 2;
        cfg.cit.ddim_steps = 4;
        cfg.eca = EcaParams {
            n_units: 4,
            n_noise: 16,
            tau: 0.5,
        };
        cfg.out_dir = out.to_path_buf();
        cfg
    }

    #[test]
    fn sweep_emits_one_row_per_cell_and_roundtrips_csv() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&dir.path().join("run"));
        let result = run_sweep(&cfg).unwrap();
        // 2 datasets x (1 family x 2 seeds).
        assert_eq!(result.rows.len(), 4);
        assert_eq!(result.error_row_count(), 0, "{:#?}", result.rows);
        for row in &result.rows {
            assert!(row.eca.unwrap() >= 0.0 && row.eca.unwrap() <= 1.0);
            assert!(row.p_citlr.unwrap() >= 0.0 && row.p_citlr.unwrap() <= 1.0);
            assert!(row.p_dp.unwrap() >= 0.0 && row.p_dp.unwrap() <= 1.0);
            assert!(row.p_eo.unwrap() >= 0.0 && row.p_eo.unwrap() <= 1.0);
        }

        let on_disk = SweepResult::read_csv(&cfg.out_dir.join("results.csv")).unwrap();
        assert_eq!(on_disk.rows, result.rows);

        // Report streams: one line per classifier and method.
        for method in ["cit-lr", "dp", "eo"] {
            for ds in ["linear", "sin"] {
                let path = report_path(&cfg.out_dir, ds, method);
                let text = fs::read_to_string(&path).unwrap();
                assert_eq!(text.lines().count(), 2, "{}", path.display());
            }
        }
    }

    #[test]
    fn rerun_and_fresh_run_reproduce_results_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&dir.path().join("a"));
        run_sweep(&cfg).unwrap();
        let first = fs::read(cfg.out_dir.join("results.csv")).unwrap();

        // Rerun over the same directory: every cell is already recorded.
        run_sweep(&cfg).unwrap();
        let second = fs::read(cfg.out_dir.join("results.csv")).unwrap();
        assert_eq!(first, second);

        // Fresh directory: full recompute.
        let cfg_b = ExperimentConfig {
            out_dir: dir.path().join("b"),
            ..cfg.clone()
        };
        run_sweep(&cfg_b).unwrap();
        let third = fs::read(cfg_b.out_dir.join("results.csv")).unwrap();
        assert_eq!(first, third);
    }

    #[test]
    fn interrupted_sweep_resumes_to_the_same_rows() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&dir.path().join("full"));
        let full = run_sweep(&cfg).unwrap();

        // Simulate an interruption of the same run: keep only the first
        // two recorded cells, drop the final results file.
        let cfg_cut = ExperimentConfig {
            out_dir: dir.path().join("cut"),
            ..cfg.clone()
        };
        run_sweep(&cfg_cut).unwrap();
        let partial = cfg_cut.out_dir.join("results.partial.csv");
        let text = fs::read_to_string(&partial).unwrap();
        let kept: Vec<&str> = text.lines().take(2).collect();
        fs::write(&partial, format!("{}\n", kept.join("\n"))).unwrap();
        fs::remove_file(cfg_cut.out_dir.join("results.csv")).unwrap();

        let resumed = run_sweep(&cfg_cut).unwrap();
        assert_eq!(resumed.rows, full.rows);
    }

    #[test]
    fn mismatched_output_directory_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config(&dir.path().join("run"));
        fs::create_dir_all(&cfg.out_dir).unwrap();
        check_manifest(&cfg).unwrap();
        let other = ExperimentConfig {
            seed: 99,
            ..cfg.clone()
        };
        let err = check_manifest(&other).unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
    }

    #[test]
    fn csv_quoting_roundtrips_awkward_fields() {
        let spec = ClassifierSpec {
            family: Family::Logistic,
            seed: 3,
        };
        let mut row = SweepRow::errored(
            "linear",
            spec.family,
            spec.seed,
            &Error::Config("bad, \"quoted\" thing\nsecond line".into()),
        );
        row.eca = Some(0.125);
        let line = row.to_csv_line();
        assert!(!line.contains('\n'));
        let back = SweepRow::from_csv_line(&line, 1, "test").unwrap();
        assert_eq!(back, row);

        assert!(split_csv_line("a,\"b\"x,c").is_err());
        assert!(split_csv_line("a,\"unterminated").is_err());
    }
}
