//! Synthetic desk-scale dataset generation.
//!
//! A shared latent-factor model: user and item factors live in the
//! same low-rank space, interactions come from each user's top-scoring
//! items, and every modality's features are a random linear embedding
//! of the item factors plus Gaussian noise. Items a user co-interacts
//! with therefore cluster in latent space, which makes semantic
//! similarity predictive of co-interaction by construction.

use crate::dataset::{Interaction, InteractionTable, ModalityFeatures, SplitTag};
use crate::error::{Error, Result};
use crate::numerics::DenseMatrix;
use crate::rng::derive_rng;
use crate::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SynthSpec {
    pub users: usize,
    pub items: usize,
    /// (modality name, feature dimension) pairs.
    pub modalities: Vec<(String, usize)>,
    /// Latent factor rank; must not exceed any modality dimension.
    pub rank: usize,
    /// Feature noise standard deviation.
    pub noise: f64,
    /// Saturation gain of the feature encoder: features are
    /// `tanh(gain * z M) + noise`. Zero selects the plain linear map.
    /// Saturation keeps the neighborhood structure of the projection
    /// while making the latent factors hard to read back linearly,
    /// matching the regime of pretrained high-dimensional encoders.
    pub saturation: f64,
    /// Number of item clusters in latent space; 0 draws items
    /// independently. Clustered items share most of their factor mass
    /// with a cluster centroid, so semantic neighbors carry usable
    /// collaborative signal.
    pub clusters: usize,
    /// Exponent of the per-item exposure decay. Each user only sees a
    /// random item pool where tail items are exponentially rarer, so
    /// interaction counts follow the long-tailed shape of real
    /// catalogs; 0 makes every item visible to every user.
    pub exposure_skew: f64,
    /// Interactions per user, drawn uniformly from this inclusive range.
    pub interactions_per_user: (usize, usize),
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            users: 200,
            items: 100,
            modalities: vec![("visual".into(), 32), ("textual".into(), 16)],
            rank: 8,
            noise: 0.1,
            saturation: 3.0,
            clusters: 10,
            exposure_skew: 2.0,
            interactions_per_user: (10, 14),
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.users < 10 || self.items < 10 {
            return Err(Error::Config(format!(
                "synthetic dataset needs at least 10 users and 10 items, got {}x{}",
                self.users, self.items
            )));
        }
        if self.modalities.is_empty() {
            return Err(Error::Config("at least one modality is required".into()));
        }
        for (name, dim) in &self.modalities {
            if self.rank > *dim {
                return Err(Error::Config(format!(
                    "rank {} exceeds modality `{name}` dimension {dim}",
                    self.rank
                )));
            }
        }
        if self.rank == 0 || self.noise < 0.0 || self.saturation < 0.0 || self.exposure_skew < 0.0 {
            return Err(Error::Config(
                "rank must be >= 1, noise/saturation/exposure_skew nonnegative".into(),
            ));
        }
        let (lo, hi) = self.interactions_per_user;
        if lo == 0 || hi < lo {
            return Err(Error::Config(format!(
                "bad interactions_per_user range ({lo}, {hi})"
            )));
        }
        Ok(())
    }
}

fn gaussian_matrix<T: Scalar>(
    rows: usize,
    cols: usize,
    scale: f64,
    rng: &mut impl Rng,
) -> DenseMatrix<T> {
    let data: Vec<T> = (0..rows * cols)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::from_f64_lossy(z * scale)
        })
        .collect();
    DenseMatrix::from_vec(rows, cols, data).unwrap()
}

pub fn generate_synthetic<T: Scalar>(
    spec: &SynthSpec,
) -> Result<(InteractionTable, Vec<ModalityFeatures<T>>)> {
    spec.validate()?;
    let mut rng = derive_rng(spec.seed, "synth");
    let scale = 1.0 / (spec.rank as f64).sqrt();
    let user_factors: DenseMatrix<T> = gaussian_matrix(spec.users, spec.rank, scale, &mut rng);
    let item_factors: DenseMatrix<T> = if spec.clusters > 0 {
        let centroids: DenseMatrix<T> = gaussian_matrix(spec.clusters, spec.rank, scale, &mut rng);
        let idio: DenseMatrix<T> = gaussian_matrix(spec.items, spec.rank, scale, &mut rng);
        let w_centroid = T::from_f64_lossy(0.75f64.sqrt());
        let w_idio = T::from_f64_lossy(0.25f64.sqrt());
        let mut z = DenseMatrix::zeros(spec.items, spec.rank);
        for i in 0..spec.items {
            let c = i % spec.clusters;
            for (col, v) in z.row_mut(i).iter_mut().enumerate() {
                *v = w_centroid * centroids[(c, col)] + w_idio * idio[(i, col)];
            }
        }
        z
    } else {
        gaussian_matrix(spec.items, spec.rank, scale, &mut rng)
    };

    // Per-item visibility: a random popularity order with polynomially
    // decaying exposure probability (floor 0.05).
    let exposure: Vec<f64> = {
        let mut order: Vec<usize> = (0..spec.items).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.gen_range(0..=i));
        }
        let mut q = vec![1.0f64; spec.items];
        if spec.exposure_skew > 0.0 {
            for (rank, &item) in order.iter().enumerate() {
                let base = 1.0 - rank as f64 / spec.items as f64;
                q[item] = base.powf(spec.exposure_skew).max(0.05);
            }
        }
        q
    };

    let mut interactions = Vec::new();
    let (lo, hi) = spec.interactions_per_user;
    for u in 0..spec.users {
        let count = rng.gen_range(lo..=hi).min(spec.items);
        let mut pool: Vec<usize> = (0..spec.items)
            .filter(|&i| rng.gen::<f64>() < exposure[i])
            .collect();
        if pool.len() < count {
            let mut rest: Vec<usize> = (0..spec.items).filter(|i| !pool.contains(i)).collect();
            for i in (1..rest.len()).rev() {
                rest.swap(i, rng.gen_range(0..=i));
            }
            pool.extend(rest.into_iter().take(count - pool.len()));
        }
        let mut scored: Vec<(usize, T)> = pool
            .into_iter()
            .map(|i| {
                (
                    i,
                    crate::numerics::dense::dot(user_factors.row(u), item_factors.row(i)),
                )
            })
            .collect();
        scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        for &(item, _) in scored.iter().take(count) {
            interactions.push(Interaction {
                user: u,
                item,
                tag: SplitTag::Train,
            });
        }
    }

    let mut features = Vec::new();
    for (name, dim) in &spec.modalities {
        let map: DenseMatrix<T> = gaussian_matrix(spec.rank, *dim, 1.0, &mut rng);
        let mut matrix = item_factors.matmul(&map)?;
        if spec.saturation > 0.0 {
            let gain = T::from_f64_lossy(spec.saturation);
            matrix = matrix.map(|v| (gain * v).tanh());
        }
        if spec.noise > 0.0 {
            let noise: DenseMatrix<T> = gaussian_matrix(spec.items, *dim, spec.noise, &mut rng);
            matrix = matrix.add(&noise)?;
        }
        // Zero rows would break cosine similarity downstream; resample
        // the row's noise until it has mass (practically never taken).
        for i in 0..matrix.rows() {
            while matrix.row_norm(i) <= T::zero() {
                for v in matrix.row_mut(i) {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *v = T::from_f64_lossy(z * spec.noise.max(1e-6));
                }
            }
        }
        features.push(ModalityFeatures {
            name: name.clone(),
            matrix,
        });
    }

    let table = InteractionTable {
        n_users: spec.users,
        n_items: spec.items,
        interactions,
        user_ids: (0..spec.users).map(|u| format!("u{u:05}")).collect(),
        item_ids: (0..spec.items).map(|i| format!("i{i:05}")).collect(),
        duplicates_dropped: 0,
    };
    Ok((table, features))
}
