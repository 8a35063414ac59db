use crate::error::{Error, Result};

use super::{Point, PointCloud, Rotation};

/// Half-width of the image plane; covers the rotated unit cube.
const IMAGE_HALF_WIDTH: f64 = 0.866_025_403_784_438_6;

/// Points surviving a z-buffer pass, with their indices in the source cloud
/// (ascending).
#[derive(Clone, Debug, PartialEq)]
pub struct Partial {
    pub cloud: PointCloud,
    pub indices: Vec<usize>,
}

/// Keeps, per pixel of an `image_res x image_res` orthographic image seen
/// from direction `view`, only the point nearest the viewer. Surviving
/// points keep their original coordinates.
pub fn make_partial(cloud: &PointCloud, view: Point, image_res: usize) -> Result<Partial> {
    if cloud.is_empty() {
        return Err(Error::EmptyInput("make_partial needs at least one point".into()));
    }
    if image_res == 0 {
        return Err(Error::contract("image resolution must be positive"));
    }
    let rot = Rotation::aligning_to_z(view)?;
    let pixel = |c: f64| {
        let t = (c + IMAGE_HALF_WIDTH) / (2.0 * IMAGE_HALF_WIDTH) * image_res as f64;
        (t.floor().max(0.0) as usize).min(image_res - 1)
    };
    // (depth, index) of the nearest point per pixel; larger z is nearer.
    let mut zbuf: Vec<Option<(f64, usize)>> = vec![None; image_res * image_res];
    for (i, p) in cloud.points().iter().enumerate() {
        let q = rot.apply(*p);
        let slot = &mut zbuf[pixel(q[1]) * image_res + pixel(q[0])];
        match slot {
            Some((z, _)) if *z >= q[2] => {}
            _ => *slot = Some((q[2], i)),
        }
    }
    let mut indices: Vec<usize> = zbuf.into_iter().flatten().map(|(_, i)| i).collect();
    indices.sort_unstable();
    if indices.is_empty() {
        return Err(Error::EmptyInput("no point survived the z-buffer".into()));
    }
    Ok(Partial {
        cloud: cloud.select(&indices),
        indices,
    })
}
