use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use highlight_core::checkpoint::{load_checkpoint, save_checkpoint};
use highlight_core::config::RunConfig;
use highlight_core::data::{synth_generate, Manifest, Split, SynthConfig, VideoSequence};
use highlight_core::eval::{map_report, EvalItem};
use highlight_core::model::{Mode, Model, ModelOutput, Variant};
use highlight_core::numerics::{finite_diff_check, FdConfig, ParamMap};
use highlight_core::training::{init_seed, loss_and_grads, train as fit_model};
use highlight_core::Error;
use rayon::prelude::*;

use crate::{
    ConfigArgs, DumpArgs, EvalArgs, Failure, GradcheckArgs, ModelArgs, SynthArgs, TrainArgs,
};

type Outcome = Result<(), Failure>;

pub fn synth(a: &SynthArgs) -> Outcome {
    let cfg = SynthConfig {
        n_videos: a.videos,
        n_test: a.test_videos.unwrap_or((a.videos / 2).min(20)),
        t_full: a.segments,
        d_in_v: a.dv,
        d_in_a: a.da,
        separation: a.sep,
        noise: a.noise,
        categories: a.categories,
        seed: a.seed,
    };
    let ds = synth_generate(&cfg)?;
    let path = ds.write(&a.out)?;
    println!(
        "wrote {} videos ({} test) to {}",
        cfg.n_videos,
        cfg.n_test,
        path.display()
    );
    Ok(())
}

fn run_config(args: &ConfigArgs, base: RunConfig) -> Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => base,
    };
    for o in &args.overrides {
        cfg.set(o)?;
    }
    Ok(cfg)
}

pub fn train(a: &TrainArgs) -> Outcome {
    let manifest = Manifest::load(&a.manifest)?;
    let mut cfg = run_config(&a.config, RunConfig::default())?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let (dv, da) = manifest.dims();
    let model = Model::new(cfg.model_config(dv, da)?)?;
    let train_cfg = cfg.train_config()?;
    cfg.d_in_visual = Some(dv);
    cfg.d_in_audio = Some(da);

    let videos = manifest.load_split(Some(Split::Train))?;
    if videos.is_empty() {
        return Err(Error::Data("manifest has no train videos".into()).into());
    }
    fs::create_dir_all(&a.out)?;
    cfg.save(&a.out.join("config.json"))?;

    let every = train_cfg.checkpoint_every;
    let result = fit_model(&model, &videos, &train_cfg, |s, params| {
        eprintln!(
            "epoch {:>3}  ce {:.5}  hpcl {:.5}  rank {:.5}  total {:.5}",
            s.epoch, s.ce, s.hpcl, s.rank, s.total
        );
        if every > 0 && s.epoch % every == 0 {
            save_checkpoint(
                params,
                &a.out.join(format!("checkpoint-epoch{:03}.bin", s.epoch)),
            )?;
        }
        Ok(())
    })?;
    for id in &result.skipped {
        eprintln!("warning: video {id} holds a single class and was not used for training");
    }
    save_checkpoint(&result.params, &a.out.join("checkpoint.bin"))?;

    let mut w = csv::Writer::from_path(a.out.join("history.csv"))?;
    w.write_record(["epoch", "ce", "hpcl", "rank", "total"])?;
    for h in &result.history {
        w.write_record([
            h.epoch.to_string(),
            h.ce.to_string(),
            h.hpcl.to_string(),
            h.rank.to_string(),
            h.total.to_string(),
        ])?;
    }
    w.flush()?;
    println!("wrote {}", a.out.join("checkpoint.bin").display());
    Ok(())
}

struct Loaded {
    manifest: Manifest,
    model: Model,
    params: ParamMap,
}

fn load_model(a: &ModelArgs) -> Result<Loaded, Failure> {
    let manifest = Manifest::load(&a.manifest)?;
    let config_path = match &a.config {
        Some(p) => p.clone(),
        None => a
            .checkpoint
            .parent()
            .map_or_else(|| PathBuf::from("config.json"), |d| d.join("config.json")),
    };
    let cfg = RunConfig::load(&config_path)?;
    let (dv, da) = manifest.dims();
    let model = Model::new(cfg.model_config(dv, da)?)?;
    let params = load_checkpoint(&a.checkpoint)?;
    model.check_params(&params).map_err(|e| {
        Error::Config(format!(
            "checkpoint {} does not fit the configured model: {e}",
            a.checkpoint.display()
        ))
    })?;
    Ok(Loaded {
        manifest,
        model,
        params,
    })
}

fn parse_split(s: &str) -> Result<Option<Split>, Failure> {
    match s {
        "train" => Ok(Some(Split::Train)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(Error::Config(format!("unknown split {other:?} (train|test|all)")).into()),
    }
}

/// Loads and scores every video of a split in eval mode.
fn score(l: &Loaded, split: Option<Split>) -> Result<Vec<(VideoSequence, ModelOutput)>, Failure> {
    let entries: Vec<_> = l.manifest.entries_in(split).collect();
    if entries.is_empty() {
        return Err(Error::Data("no videos in the requested split".into()).into());
    }
    entries
        .par_iter()
        .map(|e| {
            let v = l.manifest.load_entry(e)?;
            let out = l.model.predict(&l.params, &v.visual, &v.audio)?;
            Ok((v, out))
        })
        .collect::<Result<_, Error>>()
        .map_err(Failure::from)
}

pub fn eval(a: &EvalArgs) -> Outcome {
    let loaded = load_model(&a.model)?;
    let scored = score(&loaded, parse_split(&a.split)?)?;
    let items: Vec<EvalItem> = scored
        .iter()
        .map(|(v, _)| EvalItem {
            id: v.id.clone(),
            category: v.category.clone(),
            labels: v.labels.clone(),
        })
        .collect();
    let predictions: HashMap<String, Vec<f64>> = scored
        .into_iter()
        .map(|(v, out)| (v.id, out.y_fused))
        .collect();
    let report = map_report(&predictions, &items, a.protocol)?;
    fs::write(
        &a.out,
        serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n",
    )?;
    println!(
        "{} over {} videos: {:.4}",
        a.protocol,
        items.len(),
        report.dataset_average
    );
    Ok(())
}

fn write_per_video(out: &Path, id: &str, header: Vec<String>, rows: Vec<Vec<String>>) -> Outcome {
    let mut w = csv::Writer::from_path(out.join(format!("{id}.csv")))?;
    w.write_record(&header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn predict(a: &DumpArgs) -> Outcome {
    let loaded = load_model(&a.model)?;
    let scored = score(&loaded, parse_split(&a.split)?)?;
    fs::create_dir_all(&a.out)?;
    for (v, o) in &scored {
        let header = ["segment_index", "y_fused", "y_tilde", "y_v", "y_a"]
            .map(String::from)
            .to_vec();
        let rows = (0..v.len())
            .map(|i| {
                vec![
                    i.to_string(),
                    o.y_fused[i].to_string(),
                    o.y_tilde[i].to_string(),
                    o.y_v[i].to_string(),
                    o.y_a[i].to_string(),
                ]
            })
            .collect();
        write_per_video(&a.out, &v.id, header, rows)?;
    }
    println!(
        "wrote scores for {} videos to {}",
        scored.len(),
        a.out.display()
    );
    Ok(())
}

pub fn embed(a: &DumpArgs) -> Outcome {
    let loaded = load_model(&a.model)?;
    let scored = score(&loaded, parse_split(&a.split)?)?;
    fs::create_dir_all(&a.out)?;
    for (v, o) in &scored {
        let width = o.f_hat.cols();
        let mut header: Vec<String> = (0..width).map(|j| format!("e{j}")).collect();
        header.push("label".into());
        let rows = (0..v.len())
            .map(|i| {
                let mut r: Vec<String> = o.f_hat.row(i).iter().map(f64::to_string).collect();
                r.push(v.labels[i].to_string());
                r
            })
            .collect();
        write_per_video(&a.out, &v.id, header, rows)?;
    }
    println!(
        "wrote embeddings for {} videos to {}",
        scored.len(),
        a.out.display()
    );
    Ok(())
}

const GRADCHECK_MAX_D: usize = 32;
const GRADCHECK_MAX_T: usize = 8;
const GRADCHECK_INPUT_WIDTH: usize = 8;
const GRADCHECK_REFINEMENTS: usize = 2;

/// Toy configuration used by `gradcheck` when no config file is given.
fn gradcheck_defaults() -> RunConfig {
    RunConfig {
        d: 16,
        d_k: 32,
        d_v: 32,
        n_layers: 1,
        heads: 2,
        dropout: 0.0,
        variant: Variant::Full,
        ..RunConfig::default()
    }
}

pub fn gradcheck(a: &GradcheckArgs) -> Outcome {
    let cfg = run_config(&a.config, gradcheck_defaults())?;
    if cfg.d > GRADCHECK_MAX_D {
        return Err(Error::Config(format!(
            "gradcheck needs d <= {GRADCHECK_MAX_D}, got {}",
            cfg.d
        ))
        .into());
    }
    if !(2..=GRADCHECK_MAX_T).contains(&a.segments) {
        return Err(Error::Config(format!(
            "gradcheck needs 2 <= segments <= {GRADCHECK_MAX_T}, got {}",
            a.segments
        ))
        .into());
    }
    if cfg.dropout > 0.0 {
        return Err(Error::Contract(format!(
            "gradcheck needs a deterministic objective; dropout is {}",
            cfg.dropout
        ))
        .into());
    }
    let dv = cfg.d_in_visual.unwrap_or(GRADCHECK_INPUT_WIDTH);
    let da = cfg.d_in_audio.unwrap_or(GRADCHECK_INPUT_WIDTH);
    let model = Model::new(cfg.model_config(dv, da)?)?;
    let train_cfg = cfg.train_config()?;
    let video = synth_generate(&SynthConfig {
        n_videos: 1,
        n_test: 0,
        t_full: a.segments,
        d_in_v: dv,
        d_in_a: da,
        seed: a.seed,
        ..SynthConfig::default()
    })?
    .videos
    .remove(0);

    let mut params = model.init_params(init_seed(a.seed));
    let objective = |p: &ParamMap| {
        loss_and_grads(
            &model,
            p,
            &video.visual,
            &video.audio,
            &video.labels,
            &train_cfg.loss,
            train_cfg.region_size,
            Mode::Train,
            a.seed,
        )
    };
    let (_, mut grads) = objective(&params)?;
    if a.corrupt_grad {
        for x in grads[0].data_mut() {
            *x += 1.0;
        }
    }
    let report = finite_diff_check(
        |p| objective(p).map(|(l, _)| l.total),
        &mut params,
        &grads,
        &FdConfig {
            tol: a.tol,
            max_coords_per_tensor: a.max_coords,
            seed: a.seed,
            refinements: GRADCHECK_REFINEMENTS,
            ..FdConfig::default()
        },
    )?;
    let width = report
        .entries
        .iter()
        .map(|e| e.name.len())
        .max()
        .unwrap_or(0);
    for e in &report.entries {
        println!(
            "{:<width$}  {:>6} coords  max rel err {:.3e}{}",
            e.name,
            e.coords_checked,
            e.max_rel_err,
            if e.max_rel_err > report.tol {
                "  FAIL"
            } else {
                ""
            }
        );
    }
    println!(
        "worst relative error {:.3e} (tolerance {:.1e}) over {} tensors",
        report.max_rel_err,
        report.tol,
        report.entries.len()
    );
    if report.passed {
        Ok(())
    } else {
        let w = report.worst().expect("failed report has entries");
        Err(Failure::Check(format!(
            "{} exceeds tolerance at entry {}: analytic {:e}, numeric {:e}",
            w.name, w.worst_coord, w.analytic, w.numeric
        )))
    }
}
