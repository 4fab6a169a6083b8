//! Sliding-window feature caches for streaming temporal attention.
//!
//! A [`FeatureCache`] holds the most recent `capacity` latents of one
//! attention site, stored before positional encoding so keys and values can
//! be recomputed with window-relative ages on every step. A [`CacheBank`]
//! spreads frames over `m` caches to stretch the temporal span without
//! growing the window.

use std::collections::VecDeque;

use half::f16;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum PrecisionMode {
    #[default]
    Full32,
    /// Values are rounded to IEEE half precision on store and widened on read.
    Emulated16,
}

impl PrecisionMode {
    /// Command-line spelling: `fp32` or `fp16`.
    pub fn flag(self) -> &'static str {
        match self {
            PrecisionMode::Full32 => "fp32",
            PrecisionMode::Emulated16 => "fp16",
        }
    }

    pub fn bytes_per_value<T>(self) -> usize {
        match self {
            PrecisionMode::Full32 => std::mem::size_of::<T>(),
            PrecisionMode::Emulated16 => 2,
        }
    }
}

impl std::str::FromStr for PrecisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fp32" => Ok(PrecisionMode::Full32),
            "fp16" => Ok(PrecisionMode::Emulated16),
            other => Err(Error::InvalidArgument(format!("precision {other:?}, expected fp32 or fp16"))),
        }
    }
}

#[derive(Clone, Debug)]
enum Stored<T> {
    Full(Vec<T>),
    Half(Vec<f16>),
}

#[derive(Clone, Debug)]
struct Entry<T> {
    frame_index: usize,
    shape: Vec<usize>,
    values: Stored<T>,
}

impl<T: Real> Entry<T> {
    fn widen(&self) -> Tensor<T> {
        let data = match &self.values {
            Stored::Full(v) => v.clone(),
            Stored::Half(v) => v.iter().map(|h| T::lit(h.to_f64())).collect(),
        };
        Tensor::new(self.shape.clone(), data).expect("entry shape matches its data")
    }

    fn value_count(&self) -> usize {
        match &self.values {
            Stored::Full(v) => v.len(),
            Stored::Half(v) => v.len(),
        }
    }
}

/// Bounded FIFO of pre-positional-encoding latents for one attention site.
#[derive(Clone, Debug)]
pub struct FeatureCache<T: Real = f32> {
    site_id: usize,
    capacity: usize,
    precision: PrecisionMode,
    entries: VecDeque<Entry<T>>,
}

impl<T: Real> FeatureCache<T> {
    pub fn new(site_id: usize, capacity: usize, precision: PrecisionMode) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("cache capacity must be >= 1".into()));
        }
        Ok(Self {
            site_id,
            capacity,
            precision,
            entries: VecDeque::with_capacity(capacity),
        })
    }

    pub fn site_id(&self) -> usize {
        self.site_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn precision(&self) -> PrecisionMode {
        self.precision
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn newest_index(&self) -> Option<usize> {
        self.entries.back().map(|e| e.frame_index)
    }

    pub fn frame_indices(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frame_index).collect()
    }

    /// Appends `latent` as frame `frame_index`, evicting the oldest entry
    /// when the cache is already full. Returns the evicted frame index.
    pub fn push_evict(&mut self, frame_index: usize, latent: &Tensor<T>) -> Result<Option<usize>> {
        if let Some(newest) = self.newest_index() {
            if frame_index <= newest {
                return Err(Error::OutOfOrderFrame {
                    got: frame_index,
                    newest,
                });
            }
        }
        let values = match self.precision {
            PrecisionMode::Full32 => Stored::Full(latent.data().to_vec()),
            PrecisionMode::Emulated16 => {
                Stored::Half(latent.data().iter().map(|v| f16::from_f64(v.as_f64())).collect())
            }
        };
        Ok(self.insert(Entry {
            frame_index,
            shape: latent.shape().to_vec(),
            values,
        }))
    }

    fn insert(&mut self, entry: Entry<T>) -> Option<usize> {
        let evicted = if self.entries.len() == self.capacity {
            self.entries.pop_front().map(|e| e.frame_index)
        } else {
            None
        };
        self.entries.push_back(entry);
        evicted
    }

    /// Snapshot of the cached latents, oldest first.
    pub fn window(&self) -> Vec<Tensor<T>> {
        self.entries.iter().map(Entry::widen).collect()
    }

    pub fn memory_footprint(&self) -> usize {
        let per = self.precision.bytes_per_value::<T>();
        self.entries.iter().map(|e| e.value_count() * per).sum()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// `m` feature caches that together cover roughly `m * capacity` frames.
///
/// The first `capacity` frames all go to cache 0 (one logical window). When
/// frame `capacity` arrives the warm-up entries are redistributed so that
/// cache `k` holds the frames with `index % m == k`; from then on frame `t`
/// is routed to cache `t % m`.
#[derive(Clone, Debug)]
pub struct CacheBank<T: Real = f32> {
    caches: Vec<FeatureCache<T>>,
    context: usize,
    warmup_counter: usize,
}

impl<T: Real> CacheBank<T> {
    pub fn new(site_id: usize, caches: usize, context: usize, precision: PrecisionMode) -> Result<Self> {
        if caches == 0 {
            return Err(Error::InvalidArgument("cache bank needs at least one cache".into()));
        }
        let caches = (0..caches)
            .map(|_| FeatureCache::new(site_id, context, precision))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            caches,
            context,
            warmup_counter: 0,
        })
    }

    pub fn modulus(&self) -> usize {
        self.caches.len()
    }

    pub fn context(&self) -> usize {
        self.context
    }

    pub fn caches(&self) -> &[FeatureCache<T>] {
        &self.caches
    }

    pub fn in_warmup(&self) -> bool {
        self.warmup_counter < self.context
    }

    /// Which cache frame `frame_index` belongs to given the frames seen so far.
    pub fn route(&self, frame_index: usize) -> usize {
        if self.in_warmup() {
            0
        } else {
            frame_index % self.caches.len()
        }
    }

    fn redistribute(&mut self) {
        let m = self.caches.len();
        let warm: Vec<Entry<T>> = self.caches[0].entries.drain(..).collect();
        for entry in warm {
            let k = entry.frame_index % m;
            self.caches[k].insert(entry);
        }
    }

    /// Routes and stores one frame. Returns the cache it went to and the
    /// frame evicted from that cache, if any.
    pub fn push(&mut self, frame_index: usize, latent: &Tensor<T>) -> Result<(usize, Option<usize>)> {
        if self.warmup_counter == self.context && self.caches.len() > 1 {
            self.redistribute();
        }
        let k = self.route(frame_index);
        let evicted = self.caches[k].push_evict(frame_index, latent)?;
        self.warmup_counter += 1;
        Ok((k, evicted))
    }

    pub fn window(&self, cache: usize) -> Vec<Tensor<T>> {
        self.caches[cache].window()
    }

    pub fn memory_footprint(&self) -> usize {
        self.caches.iter().map(FeatureCache::memory_footprint).sum()
    }

    pub fn clear(&mut self) {
        for c in &mut self.caches {
            c.clear();
        }
        self.warmup_counter = 0;
    }
}
