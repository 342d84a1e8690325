//! The multi-scale comparison grid: bicubic tiles on the top row, model
//! tiles below, one column per scale, optionally annotated with scale and
//! PSNR/SSIM against a reference HR image.

use metasr::image::{bicubic_resize, load_image, save_image, to_luminance, Image, ScaleFactor};
use metasr::infer::LoadedModel;
use metasr::metrics::{psnr, ssim};

use crate::{CmdError, GridArgs};

pub fn run(args: GridArgs) -> Result<(), CmdError> {
    let scales = parse_scales(&args.scales)?;
    let loaded = LoadedModel::from_checkpoint(&args.model)?;
    let input = to_luminance(&load_image(&args.input)?);
    let reference = match &args.reference {
        Some(path) => Some(to_luminance(&load_image(path)?)),
        None => None,
    };

    let mut bicubic_row = Vec::with_capacity(scales.len());
    let mut model_row = Vec::with_capacity(scales.len());
    for &r in &scales {
        let (tw, th) = (
            r.scaled_extent(input.width()),
            r.scaled_extent(input.height()),
        );
        bicubic_row.push(bicubic_resize(&input, tw, th));
        model_row.push(loaded.upscale_image(&input, r)?);
    }

    if let Some(reference) = &reference {
        for (row, tiles) in [&mut bicubic_row, &mut model_row].into_iter().enumerate() {
            for (tile, &r) in tiles.iter_mut().zip(&scales) {
                annotate(tile, r, reference, row == 0)?;
            }
        }
    }

    let composite = compose(&bicubic_row, &model_row);
    save_image(&composite, &args.output)?;
    println!(
        "grid: 2 rows x {} tiles -> {}x{} composite at {}",
        scales.len(),
        composite.width(),
        composite.height(),
        args.output.display()
    );
    Ok(())
}

fn parse_scales(text: &str) -> Result<Vec<ScaleFactor>, CmdError> {
    let mut out = Vec::new();
    for part in text.split(',') {
        let r: f64 = part
            .trim()
            .parse()
            .map_err(|_| CmdError::Usage(format!("cannot parse scale \"{part}\"")))?;
        out.push(ScaleFactor::new(r).map_err(|e| CmdError::Usage(e.to_string()))?);
    }
    if out.is_empty() {
        return Err(CmdError::Usage("scale list is empty".into()));
    }
    Ok(out)
}

/// Tiles anchored top-left in equal cells; background black.
fn compose(top: &[Image], bottom: &[Image]) -> Image {
    let cell_w = top
        .iter()
        .chain(bottom)
        .map(Image::width)
        .max()
        .unwrap_or(1);
    let cell_h = top
        .iter()
        .chain(bottom)
        .map(Image::height)
        .max()
        .unwrap_or(1);
    let cols = top.len();
    let mut canvas = Image::zeros(cols * cell_w, 2 * cell_h, 1);
    for (row, tiles) in [top, bottom].into_iter().enumerate() {
        for (col, tile) in tiles.iter().enumerate() {
            for y in 0..tile.height() {
                for x in 0..tile.width() {
                    canvas.set(col * cell_w + x, row * cell_h + y, 0, tile.get(x, y, 0));
                }
            }
        }
    }
    canvas
}

/// Stamp "x{r}" plus PSNR/SSIM vs the reference (resampled to tile extents,
/// mirroring how the evaluation protocol trims references to match).
fn annotate(
    tile: &mut Image,
    r: ScaleFactor,
    reference: &Image,
    _is_baseline_row: bool,
) -> Result<(), CmdError> {
    let ref_tile = bicubic_resize(reference, tile.width(), tile.height());
    let p = psnr(tile, &ref_tile, 255.0)?;
    let mut lines = vec![format!("x{:.1}", r.get())];
    lines.push(if p.is_infinite() {
        "P inf".to_string()
    } else {
        format!("P {p:.1}")
    });
    if tile.width() >= metasr::metrics::SSIM_WINDOW && tile.height() >= metasr::metrics::SSIM_WINDOW
    {
        let s = ssim(tile, &ref_tile, 255.0)?;
        lines.push(format!("S {s:.2}"));
    }
    for (i, line) in lines.iter().enumerate() {
        stamp_text(tile, 2, 2 + i * (GLYPH_H + 2), line);
    }
    Ok(())
}

const GLYPH_W: usize = 3;
const GLYPH_H: usize = 5;

/// 3x5 bitmap glyphs, rows top to bottom, 3 bits per row (MSB left).
fn glyph(c: char) -> Option<[u8; GLYPH_H]> {
    let rows = match c {
        '0' => [0b111, 0b101, 0b101, 0b101, 0b111],
        '1' => [0b010, 0b110, 0b010, 0b010, 0b111],
        '2' => [0b111, 0b001, 0b111, 0b100, 0b111],
        '3' => [0b111, 0b001, 0b111, 0b001, 0b111],
        '4' => [0b101, 0b101, 0b111, 0b001, 0b001],
        '5' => [0b111, 0b100, 0b111, 0b001, 0b111],
        '6' => [0b111, 0b100, 0b111, 0b101, 0b111],
        '7' => [0b111, 0b001, 0b001, 0b010, 0b010],
        '8' => [0b111, 0b101, 0b111, 0b101, 0b111],
        '9' => [0b111, 0b101, 0b111, 0b001, 0b111],
        '.' => [0b000, 0b000, 0b000, 0b000, 0b010],
        '-' => [0b000, 0b000, 0b111, 0b000, 0b000],
        'x' => [0b000, 0b101, 0b010, 0b101, 0b000],
        'P' => [0b110, 0b101, 0b110, 0b100, 0b100],
        'S' => [0b011, 0b100, 0b010, 0b001, 0b110],
        'i' => [0b010, 0b000, 0b010, 0b010, 0b010],
        'n' => [0b000, 0b110, 0b101, 0b101, 0b101],
        'f' => [0b011, 0b010, 0b111, 0b010, 0b010],
        ' ' => [0; 5],
        _ => return None,
    };
    Some(rows)
}

/// White text over a darkened box so it stays readable on any tile.
fn stamp_text(img: &mut Image, x0: usize, y0: usize, text: &str) {
    let w = text.chars().count() * (GLYPH_W + 1);
    for y in y0.saturating_sub(1)..(y0 + GLYPH_H + 1).min(img.height()) {
        for x in x0.saturating_sub(1)..(x0 + w).min(img.width()) {
            img.set(x, y, 0, img.get(x, y, 0) * 0.25);
        }
    }
    let mut pen_x = x0;
    for c in text.chars() {
        if let Some(rows) = glyph(c) {
            for (dy, row) in rows.iter().enumerate() {
                for dx in 0..GLYPH_W {
                    if row & (0b100 >> dx) != 0 {
                        let (px, py) = (pen_x + dx, y0 + dy);
                        if px < img.width() && py < img.height() {
                            img.set(px, py, 0, 255.0);
                        }
                    }
                }
            }
        }
        pen_x += GLYPH_W + 1;
    }
}
