use std::path::Path;

use convcut_core::data::tensor_to_rgb_bytes;
use convcut_core::error::{Error, Result};
use convcut_core::model::grad_cam;
use convcut_core::ppm::{read_ppm, write_pgm, write_ppm, RgbImage};
use convcut_core::shape::Shape;
use convcut_core::tensor::Tensor;

use super::{build_with_checkpoint, ensure_out_dir};
use crate::config::RunConfig;

fn load_image(path: &Path, size: usize) -> Result<Tensor<f32>> {
    let img = read_ppm(path)?;
    // nearest-neighbor resize to the model's input resolution
    let mut data = vec![0f32; size * size * 3];
    for y in 0..size {
        let sy = (y * img.height / size).min(img.height - 1);
        for x in 0..size {
            let sx = (x * img.width / size).min(img.width - 1);
            for c in 0..3 {
                data[(y * size + x) * 3 + c] =
                    img.pixels[(sy * img.width + sx) * 3 + c] as f32 / 255.0;
            }
        }
    }
    Tensor::from_vec(Shape::new(vec![1, size, size, 3])?, data)
}

/// Grad-CAM for one image and class: writes the heatmap as `gradcam.pgm`
/// (target-layer resolution) and a 50% red-channel overlay as
/// `gradcam_overlay.ppm` (input resolution).
pub fn cmd_gradcam(cfg: RunConfig, image_path: &Path, class_idx: usize) -> Result<()> {
    if cfg.checkpoint_in.is_none() {
        return Err(Error::Config("gradcam needs `checkpoint_in`".into()));
    }
    ensure_out_dir(&cfg)?;
    let model = build_with_checkpoint(&cfg)?;
    let x = load_image(image_path, cfg.image_size)?;
    let cam = grad_cam(&model, &x, class_idx, cfg.target_layer.as_deref())?;
    let (h, w) = (cam.dims()[0], cam.dims()[1]);

    let pgm_path = cfg.out_dir.join("gradcam.pgm");
    let heat_bytes: Vec<u8> = cam
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_pgm(&pgm_path, w, h, &heat_bytes)?;

    // overlay: blend the (nearest-upscaled) heatmap into the red channel
    let size = cfg.image_size;
    let input_rgb = tensor_to_rgb_bytes(&x);
    let mut overlay = vec![0u8; size * size * 3];
    for y in 0..size {
        let hy = (y * h / size).min(h - 1);
        for xp in 0..size {
            let hx = (xp * w / size).min(w - 1);
            let heat = cam.data()[hy * w + hx].clamp(0.0, 1.0);
            let base = (y * size + xp) * 3;
            overlay[base] =
                ((input_rgb[base] as f32 * 0.5) + heat * 0.5 * 255.0).round().min(255.0) as u8;
            overlay[base + 1] = (input_rgb[base + 1] as f32 * 0.5).round() as u8;
            overlay[base + 2] = (input_rgb[base + 2] as f32 * 0.5).round() as u8;
        }
    }
    let overlay_path = cfg.out_dir.join("gradcam_overlay.ppm");
    write_ppm(
        &overlay_path,
        &RgbImage {
            width: size,
            height: size,
            pixels: overlay,
        },
    )?;
    println!(
        "wrote {} ({}x{}) and {}",
        pgm_path.display(),
        w,
        h,
        overlay_path.display()
    );
    Ok(())
}
