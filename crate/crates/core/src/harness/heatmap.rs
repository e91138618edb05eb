//! Anomaly maps as images: a grayscale heatmap and an image | mask |
//! prediction panel.

use std::path::Path;

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pnm;

fn check_map(g: &Tensor) -> Result<(usize, usize)> {
    let &[h, w] = g.shape() else {
        return Err(Error::shape("export_heatmap", format!("expected H×W, got {:?}", g.shape())));
    };
    if let Some(v) = g.data().iter().find(|v| !(0.0..=1.0).contains(*v)) {
        return Err(Error::invalid("map", format!("value {v} outside [0, 1]")));
    }
    Ok((h, w))
}

/// P5 bytes of `round(255 * G)`.
pub fn heatmap_pgm(g: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = check_map(g)?;
    let pixels: Vec<u8> = g.data().iter().map(|&v| pnm::to_byte(v)).collect();
    Ok(pnm::encode_pgm(w, h, &pixels))
}

pub fn export_heatmap(g: &Tensor, path: &Path) -> Result<()> {
    let bytes = heatmap_pgm(g)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// P6 bytes of three side-by-side panels: the RGB image, the mask in white,
/// and the predicted map in gray.
pub fn panel_ppm(image: &Tensor, mask: &Tensor, map: &Tensor) -> Result<Vec<u8>> {
    let (h, w) = check_map(map)?;
    if image.shape() != [h, w, 3] || mask.shape() != [h, w] {
        return Err(Error::shape(
            "export_panel",
            format!(
                "image {:?} and mask {:?} must match the map {h}×{w}",
                image.shape(),
                mask.shape()
            ),
        ));
    }
    let mut pixels = Vec::with_capacity(h * w * 9);
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let px = &image.data()[(row + x) * 3..(row + x) * 3 + 3];
            pixels.extend(px.iter().map(|&v| pnm::to_byte(v)));
        }
        for &m in &mask.data()[row..row + w] {
            let v = if m > 0.5 { 255 } else { 0 };
            pixels.extend([v, v, v]);
        }
        for &g in &map.data()[row..row + w] {
            let v = pnm::to_byte(g);
            pixels.extend([v, v, v]);
        }
    }
    Ok(pnm::encode_ppm(3 * w, h, &pixels))
}

pub fn export_panel(image: &Tensor, mask: &Tensor, map: &Tensor, path: &Path) -> Result<()> {
    let bytes = panel_ppm(image, mask, map)?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    const HEADER: &[u8] = b"P5\n5 3\n255\n";

    #[test]
    fn constant_maps() {
        let zeros = heatmap_pgm(&Tensor::zeros(&[3, 5])).unwrap();
        assert_eq!(&zeros[..HEADER.len()], HEADER);
        assert!(zeros[HEADER.len()..].iter().all(|&b| b == 0));
        assert_eq!(zeros.len(), HEADER.len() + 15);
        let ones = heatmap_pgm(&Tensor::full(&[3, 5], 1.0)).unwrap();
        assert!(ones[HEADER.len()..].iter().all(|&b| b == 255));
    }

    #[test]
    fn out_of_range_and_bad_shape_are_rejected() {
        assert!(heatmap_pgm(&Tensor::full(&[2, 2], 1.5)).is_err());
        assert!(heatmap_pgm(&Tensor::full(&[2, 2], f64::NAN)).is_err());
        assert!(heatmap_pgm(&Tensor::zeros(&[4])).is_err());
    }

    #[test]
    fn panel_layout() {
        let image = Tensor::full(&[2, 2, 3], 0.5);
        let mask = Tensor::new(&[2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
        let map = Tensor::full(&[2, 2], 1.0);
        let bytes = panel_ppm(&image, &mask, &map).unwrap();
        let header = b"P6\n6 2\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        let first_row = &bytes[header.len()..header.len() + 18];
        assert_eq!(first_row, &[128, 128, 128, 128, 128, 128, 255, 255, 255, 0, 0, 0, 255, 255, 255, 255, 255, 255]);
        assert!(panel_ppm(&image, &Tensor::zeros(&[3, 2]), &map).is_err());
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let missing = Path::new("/nonexistent-dir/heatmap.pgm");
        assert!(matches!(export_heatmap(&Tensor::zeros(&[2, 2]), missing), Err(Error::Io { .. })));
    }
}
