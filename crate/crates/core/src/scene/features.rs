use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::Scene;
use crate::error::{Error, Result};
use crate::geometry::Point3;
use crate::seed::{rng_for, stream};

/// Which per-point channels feed the detector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    pub use_rgb: bool,
    pub use_appearance: bool,
    pub use_normals: bool,
    pub use_height: bool,
    pub num_points: usize,
    pub appearance_dim: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            use_rgb: true,
            use_appearance: false,
            use_normals: true,
            use_height: true,
            num_points: 2048,
            appearance_dim: 128,
        }
    }
}

impl FeatureConfig {
    /// Full-scale input: every channel, 40k points.
    pub fn full_scale() -> Self {
        FeatureConfig {
            use_rgb: true,
            use_appearance: true,
            use_normals: true,
            use_height: true,
            num_points: 40_000,
            appearance_dim: 128,
        }
    }

    /// Channel width excluding xyz.
    pub fn width(&self) -> usize {
        3 * self.use_rgb as usize
            + self.appearance_dim * self.use_appearance as usize
            + 3 * self.use_normals as usize
            + self.use_height as usize
    }

    /// Sets the channel flags from a comma list such as `rgb,normals`.
    /// An empty list (or `xyz`) disables every optional channel.
    pub fn set_flags(&mut self, list: &str) -> Result<()> {
        self.use_rgb = false;
        self.use_appearance = false;
        self.use_normals = false;
        self.use_height = false;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "xyz" => {}
                "rgb" => self.use_rgb = true,
                "appearance" | "multiview" => self.use_appearance = true,
                "normals" | "normal" => self.use_normals = true,
                "height" => self.use_height = true,
                other => return Err(Error::Config(format!("unknown feature `{other}`"))),
            }
        }
        Ok(())
    }

    /// Short label in ablation-table style, e.g. `xyz+rgb+normals`.
    pub fn label(&self) -> String {
        let mut s = String::from("xyz");
        if self.use_rgb {
            s.push_str("+rgb");
        }
        if self.use_appearance {
            s.push_str("+multiview");
        }
        if self.use_normals {
            s.push_str("+normals");
        }
        if self.use_height {
            s.push_str("+height");
        }
        s
    }

    pub fn layout(&self) -> FeatureLayout {
        let mut col = 3;
        let mut take = |on: bool, w: usize| {
            if on {
                col += w;
                Some(col - w)
            } else {
                None
            }
        };
        let rgb = take(self.use_rgb, 3);
        let appearance = take(self.use_appearance, self.appearance_dim);
        let normals = take(self.use_normals, 3);
        let height = take(self.use_height, 1);
        FeatureLayout {
            rgb,
            appearance,
            normals,
            height,
            cols: col,
        }
    }
}

/// Column offsets of each enabled block in a [`PointMatrix`] row:
/// `[x, y, z | r, g, b | appearance | nx, ny, nz | height]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FeatureLayout {
    pub rgb: Option<usize>,
    pub appearance: Option<usize>,
    pub normals: Option<usize>,
    pub height: Option<usize>,
    pub cols: usize,
}

/// Row-major `rows × cols` matrix of points with their channels.
#[derive(Clone, Debug, PartialEq)]
pub struct PointMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl PointMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn position(&self, i: usize) -> Point3 {
        let r = self.row(i);
        [r[0], r[1], r[2]]
    }

    pub fn positions(&self) -> Vec<Point3> {
        (0..self.rows).map(|i| self.position(i)).collect()
    }

    /// Channel columns (everything after xyz) of row `i`.
    pub fn features(&self, i: usize) -> &[f64] {
        &self.row(i)[3..]
    }
}

/// `q`-quantile of the values, by nearest rank on the sorted copy.
fn quantile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let idx = ((values.len() - 1) as f64 * q).round() as usize;
    values[idx]
}

/// Subsamples a scene to exactly `num_points` rows and lays out its channels.
///
/// Sampling is without replacement when the scene has enough points, with
/// replacement otherwise. Height is measured from the 1st percentile of z.
pub fn assemble_features(scene: &Scene, cfg: &FeatureConfig, seed: u64) -> Result<PointMatrix> {
    let n = scene.num_points();
    if n == 0 {
        return Err(Error::Empty(format!("scene {}", scene.scene_id)));
    }
    if cfg.num_points == 0 {
        return Err(Error::Config("num_points must be positive".into()));
    }
    if cfg.use_normals && scene.normals.is_none() {
        return Err(Error::MissingChannel("normals"));
    }
    if cfg.use_appearance {
        match &scene.appearance {
            None => return Err(Error::MissingChannel("appearance")),
            Some(a) if a.dim != cfg.appearance_dim => {
                return Err(Error::Config(format!(
                    "scene {} has {}-d appearance, config expects {}",
                    scene.scene_id, a.dim, cfg.appearance_dim
                )))
            }
            Some(_) => {}
        }
    }
    let mut rng = rng_for(seed, stream::SUBSAMPLE, 0);
    let picks: Vec<usize> = if n >= cfg.num_points {
        index::sample(&mut rng, n, cfg.num_points).into_vec()
    } else {
        (0..cfg.num_points).map(|_| rng.gen_range(0..n)).collect()
    };
    let floor = if cfg.use_height {
        let mut z: Vec<f64> = scene.positions.iter().map(|p| p[2]).collect();
        quantile(&mut z, 0.01)
    } else {
        0.0
    };
    let layout = cfg.layout();
    let mut data = Vec::with_capacity(cfg.num_points * layout.cols);
    for &i in &picks {
        data.extend_from_slice(&scene.positions[i]);
        if cfg.use_rgb {
            data.extend(scene.colors[i].iter().map(|c| c / 255.0));
        }
        if let (true, Some(app)) = (cfg.use_appearance, &scene.appearance) {
            data.extend_from_slice(&app.values[i * app.dim..(i + 1) * app.dim]);
        }
        if let (true, Some(normals)) = (cfg.use_normals, &scene.normals) {
            data.extend_from_slice(&normals[i]);
        }
        if cfg.use_height {
            data.push(scene.positions[i][2] - floor);
        }
    }
    Ok(PointMatrix {
        rows: cfg.num_points,
        cols: layout.cols,
        data,
    })
}
