use std::sync::{Arc, OnceLock};

use crate::comm::{FeatureScale, Topology};
use crate::error::{Error, Result};
use crate::road::{RoadNetwork, TraceFrame};

/// A map with its traffic trace; radio graphs are built lazily per frame.
#[derive(Debug)]
pub struct World {
    pub name: String,
    pub map: Arc<RoadNetwork>,
    pub frames: Arc<Vec<TraceFrame>>,
    pub comm_range: f64,
    pub scale: FeatureScale,
    topologies: Vec<OnceLock<Arc<Topology>>>,
}

impl World {
    /// Frames must cover consecutive seconds.
    pub fn new(
        name: impl Into<String>,
        map: Arc<RoadNetwork>,
        frames: Arc<Vec<TraceFrame>>,
        comm_range: f64,
        k_max: usize,
    ) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Parameter("a world needs at least one frame".into()));
        }
        if frames.windows(2).any(|w| w[1].time_step != w[0].time_step + 1) {
            return Err(Error::Validation("trace frames must cover consecutive seconds".into()));
        }
        if !(comm_range > 0.0) {
            return Err(Error::Parameter(format!("comm_range must be positive, got {comm_range}")));
        }
        let scale = FeatureScale {
            map_diagonal: map.diagonal().max(1.0),
            k_max,
        };
        let topologies = (0..frames.len()).map(|_| OnceLock::new()).collect();
        Ok(Self {
            name: name.into(),
            map,
            frames,
            comm_range,
            scale,
            topologies,
        })
    }

    pub fn first_t(&self) -> i64 {
        self.frames[0].time_step
    }

    pub fn last_t(&self) -> i64 {
        self.frames[self.frames.len() - 1].time_step
    }

    fn index(&self, t: i64) -> Result<usize> {
        let i = t - self.first_t();
        if i < 0 || i as usize >= self.frames.len() {
            return Err(Error::Lookup(format!("no frame at t={t} in world `{}`", self.name)));
        }
        Ok(i as usize)
    }

    pub fn frame(&self, t: i64) -> Result<&TraceFrame> {
        Ok(&self.frames[self.index(t)?])
    }

    pub fn topology(&self, t: i64) -> Result<Arc<Topology>> {
        let i = self.index(t)?;
        if let Some(topo) = self.topologies[i].get() {
            return Ok(Arc::clone(topo));
        }
        let topo = Arc::new(Topology::from_frame(&self.frames[i], self.comm_range)?);
        Ok(Arc::clone(self.topologies[i].get_or_init(|| topo)))
    }
}
