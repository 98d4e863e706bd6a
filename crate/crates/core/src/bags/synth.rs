use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::diff::Tensor2D;
use crate::error::{Error, Result};
use crate::wsi::{Magnification, TileCoord};

use super::{bag_label_oracle, Bag};

/// Feature-space bag generator.
///
/// Negative instances are standard Gaussian in `embed_dim` dimensions;
/// positive instances are shifted by `class_separation` along one random unit
/// direction fixed by the seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub num_bags: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    pub embed_dim: usize,
    pub positive_instance_rate: f64,
    pub class_separation: f64,
    /// Fraction of bags whose observed label is flipped after generation.
    pub label_noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            num_bags: 200,
            min_instances: 20,
            max_instances: 100,
            embed_dim: 32,
            positive_instance_rate: 0.3,
            class_separation: 2.0,
            label_noise: 0.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(msg.to_string()));
        if self.num_bags == 0 || self.embed_dim == 0 {
            return bad("num_bags and embed_dim must be positive");
        }
        if self.min_instances == 0 || self.min_instances > self.max_instances {
            return bad("instance range must satisfy 1 <= min <= max");
        }
        if !(self.positive_instance_rate > 0.0 && self.positive_instance_rate <= 1.0) {
            return bad("positive_instance_rate must lie in (0, 1]");
        }
        if !(self.class_separation >= 0.0 && self.class_separation.is_finite()) {
            return bad("class_separation must be finite and non-negative");
        }
        if !(0.0..=1.0).contains(&self.label_noise) {
            return bad("label_noise must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Unit direction along which positive instances are shifted.
pub(crate) fn signal_direction(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-9 {
            return v.into_iter().map(|x| x / norm).collect();
        }
    }
}

pub(crate) fn sample_instance(rng: &mut ChaCha8Rng, direction: &[f64], shift: f64) -> Vec<f64> {
    direction
        .iter()
        .map(|d| rng.sample::<f64, _>(StandardNormal) + shift * d)
        .collect()
}

/// Draws positive-instance flags for a positive bag, resampling until at least one is set.
pub(crate) fn positive_flags(rng: &mut ChaCha8Rng, n: usize, rate: f64) -> Vec<u8> {
    loop {
        let flags: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(rate))).collect();
        if flags.contains(&1) {
            return flags;
        }
    }
}

/// Generates labelled bags; identical configs give identical bags.
///
/// Bags are balanced by alternating labels. A bag whose label is flipped by
/// `label_noise` keeps no instance labels, since they would contradict it.
pub fn generate_synthetic(config: &SynthConfig) -> Result<Vec<Bag>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let direction = signal_direction(&mut rng, config.embed_dim);

    let mut bags = Vec::with_capacity(config.num_bags);
    for i in 0..config.num_bags {
        let positive = i % 2 == 1;
        let n = rng.random_range(config.min_instances..=config.max_instances);
        let flags = if positive {
            positive_flags(&mut rng, n, config.positive_instance_rate)
        } else {
            vec![0; n]
        };
        let mut values = Vec::with_capacity(n * config.embed_dim);
        for &f in &flags {
            let shift = if f == 1 { config.class_separation } else { 0.0 };
            values.extend(sample_instance(&mut rng, &direction, shift));
        }
        let instances = Tensor2D::from_vec(n, config.embed_dim, values)?;
        let label = bag_label_oracle(&flags)?;
        let bag = Bag::new(format!("synth-{i:05}"), instances, label)?.with_instance_labels(flags)?;
        bags.push(bag);
    }

    if config.label_noise > 0.0 {
        for bag in &mut bags {
            if rng.random_bool(config.label_noise) {
                bag.label = 1 - bag.label;
                bag.instance_labels = None;
            }
        }
    }
    Ok(bags)
}

/// Bags laid out on a tile grid where a positive bag's positive instances
/// form one compact region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlantedConfig {
    pub num_bags: usize,
    pub grid_cols: u32,
    pub grid_rows: u32,
    /// Region radius in tile units, measured between tile centres.
    pub region_radius: f64,
    pub embed_dim: usize,
    pub class_separation: f64,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            num_bags: 160,
            grid_cols: 10,
            grid_rows: 10,
            region_radius: 1.5,
            embed_dim: 32,
            class_separation: 3.0,
            seed: 0,
        }
    }
}

/// Generates grid bags with tile coordinates at 5x; labels alternate.
pub fn generate_planted(config: &PlantedConfig) -> Result<Vec<Bag>> {
    let r = config.region_radius;
    let margin = r.ceil() as u32;
    if config.num_bags == 0
        || config.embed_dim == 0
        || r < 0.0
        || config.grid_cols <= 2 * margin
        || config.grid_rows <= 2 * margin
    {
        return Err(Error::Config("planted grid must be larger than the region".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let direction = signal_direction(&mut rng, config.embed_dim);
    let (cols, rows) = (config.grid_cols, config.grid_rows);
    let coords: Vec<TileCoord> = (0..rows)
        .flat_map(|row| (0..cols).map(move |col| TileCoord::new(Magnification::X5, col, row)))
        .collect();
    let mut bags = Vec::with_capacity(config.num_bags);
    for i in 0..config.num_bags {
        let flags: Vec<u8> = if i % 2 == 1 {
            let cx = rng.random_range(margin..cols - margin);
            let cy = rng.random_range(margin..rows - margin);
            coords
                .iter()
                .map(|c| {
                    let d2 = (f64::from(c.col) - f64::from(cx)).powi(2) + (f64::from(c.row) - f64::from(cy)).powi(2);
                    u8::from(d2 <= r * r)
                })
                .collect()
        } else {
            vec![0; coords.len()]
        };
        let mut values = Vec::with_capacity(coords.len() * config.embed_dim);
        for &f in &flags {
            let shift = if f == 1 { config.class_separation } else { 0.0 };
            values.extend(sample_instance(&mut rng, &direction, shift));
        }
        let instances = Tensor2D::from_vec(coords.len(), config.embed_dim, values)?;
        let label = bag_label_oracle(&flags)?;
        bags.push(
            Bag::new(format!("planted-{i:04}"), instances, label)?
                .with_instance_labels(flags)?
                .with_tile_coords(coords.clone())?,
        );
    }
    Ok(bags)
}
