use std::io::Write;

use metasr::config::RunConfig;
use metasr::image::{load_image, save_image, Dataset, ScaleFactor};
use metasr::infer::{evaluate_against_bicubic, LoadedModel};
use metasr::nn::ParameterStore;
use metasr::train::{train, TrainState};

use crate::{CmdError, EvaluateArgs, TrainArgs, UpscaleArgs};

pub fn train(args: TrainArgs) -> Result<(), CmdError> {
    let mut cfg = RunConfig::from_file(&args.config)?;
    for kv in &args.set {
        let (key, value) = kv.split_once('=').ok_or_else(|| {
            CmdError::Usage(format!("--set expects KEY=VALUE, got \"{kv}\""))
        })?;
        cfg.set(key.trim(), value.trim())?;
    }

    let dataset = Dataset::load_dir(&args.data)?;
    let phi_store = match &args.perceptual_weights {
        Some(path) => Some(ParameterStore::<f32>::load(path)?),
        None => None,
    };
    let mut state = TrainState::new(
        cfg.train.clone(),
        cfg.model(),
        cfg.discriminator(),
        phi_store,
    )?;

    if let Some(pretrain_dir) = &args.pretrain {
        let pretrain_ds = Dataset::load_dir(pretrain_dir)?;
        let phase = cfg.train.total_updates;
        train(&mut state, &pretrain_ds, &args.out)?;
        // Transfer phase: same schedule length on the target corpus.
        state.set_total_updates(phase * 2);
    }
    let records = train(&mut state, &dataset, &args.out)?;
    if let Some(last) = records.last() {
        println!(
            "trained to step {} (l1 {:.4}, total {:.4}); checkpoints in {}",
            last.step,
            last.l1,
            last.total,
            args.out.display()
        );
    } else {
        println!("nothing to do: checkpoint already at total_updates");
    }
    Ok(())
}

pub fn upscale(args: UpscaleArgs) -> Result<(), CmdError> {
    let r = ScaleFactor::new(args.scale)
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    let loaded = LoadedModel::from_checkpoint(&args.model)?;
    let img = load_image(&args.input)?;
    let sr = loaded.upscale_image(&img, r)?;
    save_image(&sr, &args.output)?;
    println!(
        "{}x{} -> {}x{} at x{}",
        img.width(),
        img.height(),
        sr.width(),
        sr.height(),
        r
    );
    Ok(())
}

fn fmt_metric(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

pub fn evaluate(args: EvaluateArgs) -> Result<(), CmdError> {
    if args.baseline != "bicubic" {
        return Err(CmdError::Usage(format!(
            "unsupported baseline \"{}\" (only \"bicubic\")",
            args.baseline
        )));
    }
    let r = ScaleFactor::new(args.scale)
        .map_err(|e| CmdError::Usage(e.to_string()))?;
    let loaded = LoadedModel::from_checkpoint(&args.model)?;
    let dataset = Dataset::load_dir(&args.data)?;
    let outcome = evaluate_against_bicubic(&loaded, &dataset, r, args.crop_fraction)?;

    let mut file = std::fs::File::create(&args.output)
        .map_err(|e| CmdError::Data(format!("cannot write {}: {e}", args.output.display())))?;
    let mut w = |line: String| -> Result<(), CmdError> {
        writeln!(file, "{line}")
            .map_err(|e| CmdError::Data(format!("write failed on {}: {e}", args.output.display())))
    };
    w("path,scale,psnr_db,ssim,bicubic_psnr_db,bicubic_ssim".into())?;
    for row in &outcome.rows {
        w(format!(
            "{},{},{},{},{},{}",
            row.path,
            row.scale,
            fmt_metric(row.model.psnr_db),
            fmt_metric(row.model.ssim),
            fmt_metric(row.bicubic.psnr_db),
            fmt_metric(row.bicubic.ssim)
        ))?;
    }
    let m = &outcome.model_report;
    let b = &outcome.bicubic_report;
    w(format!(
        "#mean,{},{},{},{},{}",
        r.get(),
        fmt_metric(m.psnr_mean),
        fmt_metric(m.ssim_mean),
        fmt_metric(b.psnr_mean),
        fmt_metric(b.ssim_mean)
    ))?;
    w(format!(
        "#std,{},{},{},{},{}",
        r.get(),
        fmt_metric(m.psnr_std),
        fmt_metric(m.ssim_std),
        fmt_metric(b.psnr_std),
        fmt_metric(b.ssim_std)
    ))?;

    if m.infinite_psnr_count > 0 || b.infinite_psnr_count > 0 {
        eprintln!(
            "warning: {} model / {} baseline image(s) scored infinite PSNR; excluded from means",
            m.infinite_psnr_count, b.infinite_psnr_count
        );
    }
    println!(
        "model: PSNR {} dB, SSIM {} | bicubic: PSNR {} dB, SSIM {} ({} images)",
        fmt_metric(m.psnr_mean),
        fmt_metric(m.ssim_mean),
        fmt_metric(b.psnr_mean),
        fmt_metric(b.ssim_mean),
        outcome.rows.len()
    );
    Ok(())
}
