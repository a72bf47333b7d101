use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use diano::data::{self, Channel3dConfig, StenosisConfig, VortexStreetConfig};
use diano::fdm::GridField;
use diano::io::{self, Checkpoint, Dtype, ExportFormat, RunConfig, Snapshot};
use diano::models::Model;
use diano::train::{self, Trainer};
use diano::{Error, Tensor};

#[derive(Parser)]
#[command(name = "diano", version, about = "Fourier autoencoders with latent-space PDE solvers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Case {
    Vortex,
    Stenosis,
    Channel3d,
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Pgm,
    Diaf,
}

#[derive(Clone, Copy, ValueEnum)]
enum PayloadDtype {
    F32,
    F64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen {
        #[arg(long, value_enum)]
        case: Case,
        #[arg(long)]
        grid: usize,
        #[arg(long)]
        snapshots: usize,
        #[arg(long)]
        out: PathBuf,
        /// Time between snapshots (vortex case).
        #[arg(long)]
        dt: Option<f64>,
        /// Reynolds number (vortex case).
        #[arg(long)]
        re: Option<f64>,
        #[arg(long, value_enum, default_value = "f32")]
        dtype: PayloadDtype,
        /// Seed recorded in the manifest for the train/test split.
        #[arg(long, default_value_t = 0)]
        split_seed: u64,
    },
    /// Train a model; writes checkpoint.diac, history.csv and metrics.json into --out.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint instead of starting fresh.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on its train or test split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: Split,
    },
    /// One latent PDE advance of a stored latent field.
    Advance {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode a stored snapshot and write its latent field.
    ExportLatent {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
    /// Finite-difference check of the training objective gradient.
    Gradcheck {
        #[arg(long)]
        config: PathBuf,
        /// Entries checked per parameter tensor.
        #[arg(long, default_value_t = 6)]
        sample: usize,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> Result<(), Error> {
    match cmd {
        Command::Gen { case, grid, snapshots, out, dt, re, dtype, split_seed } => {
            let ds = match case {
                Case::Vortex => {
                    let mut c = VortexStreetConfig { n: grid, n_snapshots: snapshots, ..Default::default() };
                    if let Some(dt) = dt {
                        c.dt = dt;
                    }
                    if let Some(re) = re {
                        c.re = re;
                    }
                    data::gen_vortex_street(&c)?
                }
                Case::Stenosis => data::gen_stenosis_like(&StenosisConfig { n: grid, n_snapshots: snapshots, ..Default::default() })?,
                Case::Channel3d => data::gen_channel3d(&Channel3dConfig { n: grid, n_snapshots: snapshots, ..Default::default() })?,
            };
            let dtype = match dtype {
                PayloadDtype::F32 => Dtype::F32,
                PayloadDtype::F64 => Dtype::F64,
            };
            io::save_dataset(&ds, &out, dtype, split_seed)?;
            println!("wrote {} snapshots to {}", ds.len(), out.display());
            Ok(())
        }
        Command::Train { config, data, out, resume } => {
            let rc = RunConfig::load(&config)?;
            let (ds, _) = io::load_dataset(&data)?;
            let model = Model::new(rc.model_spec())?;
            println!("{} parameters", model.param_count());
            let mut trainer = match resume {
                Some(p) => Trainer::resume(model, &ds, rc.train.clone(), Checkpoint::load(&p)?.state)?,
                None => Trainer::new(model, &ds, rc.train.clone())?,
            };
            std::fs::create_dir_all(&out).map_err(|e| Error::Io { path: out.clone(), source: e })?;
            let ckpt = out.join("checkpoint.diac");
            let result = trainer.run(|t, r| {
                println!("epoch {:4}  lr {:.3e}  train {:.6e}", r.epoch, r.lr, r.train_loss);
                write_text(&out.join("history.csv"), &train::history_csv(t.history()))
            });
            if let Err(e) = result {
                // keep the last good state on disk
                Checkpoint::new(trainer.model(), trainer.config(), trainer.state(), None).save(&ckpt)?;
                return Err(e);
            }
            let test = trainer.evaluate_test()?;
            let tr = trainer.evaluate_train()?;
            Checkpoint::new(trainer.model(), trainer.config(), trainer.state(), Some(test.mse)).save(&ckpt)?;
            write_text(&out.join("history.csv"), &train::history_csv(trainer.history()))?;
            let metrics = serde_json::json!({ "train": tr, "test": test });
            write_text(&out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
            println!("train_mse {:e}", tr.mse);
            println!("test_mse {:e}", test.mse);
            Ok(())
        }
        Command::Eval { checkpoint, data, split } => {
            let ck = Checkpoint::load(&checkpoint)?;
            let (ds, _) = io::load_dataset(&data)?;
            let model = ck.model()?;
            let idx = match split {
                Split::Train => &ck.state.split.train,
                Split::Test => &ck.state.split.test,
            };
            let n = train::sample_count(model.spec().variant, &ds);
            if idx.iter().any(|&i| i >= n) {
                return Err(Error::Invalid("checkpoint split does not fit this dataset".into()));
            }
            let m = train::evaluate(&model, &ds, idx)?;
            println!("mse {:e}", m.mse);
            println!("max_abs {:e}", m.max_abs);
            Ok(())
        }
        Command::Advance { checkpoint, input, out } => {
            let model = Checkpoint::load(&checkpoint)?.model()?;
            let snap = io::load_snapshot(&input)?;
            let z = batched(&snap)?;
            let pde = model.pde_params().ok_or_else(|| Error::Invalid("model has no latent PDE".into()))?;
            let next = model.advance(&z, &pde)?;
            io::save_snapshot(&out, &Snapshot { dtype: snap.dtype, ..unbatched(&next, &snap) }, None)?;
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::ExportLatent { checkpoint, input, out, format } => {
            let model = Checkpoint::load(&checkpoint)?.model()?;
            let snap = io::load_snapshot(&input)?;
            let x = batched(&snap)?;
            let z = model.encode(&model.bind(None), &x)?;
            let z1 = GridField::new(
                Tensor::new(z.spatial_shape().to_vec(), z.values().to_vec())?,
                z.extents().to_vec(),
            )?;
            match format {
                Format::Csv => io::export_field(&z1, &out, ExportFormat::Csv)?,
                Format::Pgm => io::export_field(&z1, &out, ExportFormat::Pgm)?,
                Format::Diaf => io::save_snapshot(&out, &Snapshot::from_field(&z1, Dtype::F64), None)?,
            }
            println!("wrote {}", out.display());
            Ok(())
        }
        Command::Gradcheck { config, sample } => {
            let rc = RunConfig::load(&config)?;
            let spec = rc.model_spec();
            let model = Model::new(spec.clone())?;
            let (x, y) = train::check_problem(&spec, 1, spec.seed)?;
            let r = train::objective_grad_check(&model, &x, &y, train::probe_settings(spec.variant), Some(sample), spec.seed)?;
            println!("checked {} entries, max relative error {:.3e} (tol {:e})", r.checked, r.max_rel_err, r.tol);
            if r.pass {
                println!("gradcheck passed");
                Ok(())
            } else {
                Err(Error::Invalid(format!("gradcheck failed on {} entries", r.failures.len())))
            }
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), Error> {
    std::fs::write(path, text).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })
}

/// A stored field as a (1, 1, S..) batch.
fn batched(s: &Snapshot) -> Result<GridField, Error> {
    let sp: Vec<usize> = s.sizes[s.sizes.len() - s.extents.len()..].to_vec();
    if s.values.len() != sp.iter().product::<usize>() {
        return Err(Error::Invalid(format!("expected a single field, got sizes {:?}", s.sizes)));
    }
    let mut shape = vec![1, 1];
    shape.extend_from_slice(&sp);
    GridField::new(Tensor::new(shape, s.values.clone())?, s.extents.clone())
}

fn unbatched(f: &GridField, like: &Snapshot) -> Snapshot {
    Snapshot {
        sizes: f.spatial_shape().to_vec(),
        extents: f.extents().to_vec(),
        dtype: like.dtype,
        values: f.values().to_vec(),
    }
}
