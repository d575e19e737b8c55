//! Panels of weekly counts over locations, their file formats, and synthetic
//! data generation.

mod io;
mod simulate;

pub use io::{export_forecast, load_dataset, write_dataset, ExportFormat};
pub use simulate::{simulate, SimConfig, SimOutput};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernel::InputPoint;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Location {
    pub id: String,
    pub lon: f64,
    pub lat: f64,
}

/// How (longitude, latitude) enter the spatial kernels.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpatialProjection {
    /// Raw degrees; distances are Euclidean in (lon, lat).
    #[default]
    Degrees,
    /// Longitude scaled by the cosine of the panel's mean latitude, so that
    /// one unit is roughly one degree of latitude in both directions.
    Equirectangular,
}

/// Aligned panel of counts and populations over locations x weeks.
///
/// Cells are stored location-major: cell `i * n_weeks + j` is location `i`
/// in week `weeks[j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    locations: Vec<Location>,
    weeks: Vec<i64>,
    counts: Vec<Option<u64>>,
    populations: Vec<f64>,
}

impl Dataset {
    pub fn new(
        locations: Vec<Location>,
        weeks: Vec<i64>,
        counts: Vec<Option<u64>>,
        populations: Vec<f64>,
    ) -> Result<Self> {
        let n = locations.len() * weeks.len();
        if counts.len() != n || populations.len() != n {
            return Err(Error::domain(format!(
                "panel of {} locations x {} weeks needs {n} cells, got {} counts and {} populations",
                locations.len(),
                weeks.len(),
                counts.len(),
                populations.len()
            )));
        }
        if weeks.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::domain("weeks must be strictly increasing"));
        }
        let mut ids: Vec<&str> = locations.iter().map(|l| l.id.as_str()).collect();
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(Error::domain(format!("duplicate location id `{}`", w[0])));
        }
        if let Some(l) = locations.iter().find(|l| !(l.lon.is_finite() && l.lat.is_finite())) {
            return Err(Error::domain(format!("location `{}` has non-finite coordinates", l.id)));
        }
        if let Some(c) = populations.iter().position(|&p| !(p > 0.0 && p.is_finite())) {
            return Err(Error::domain(format!(
                "population must be positive (location `{}`, week {})",
                locations[c / weeks.len()].id,
                weeks[c % weeks.len()]
            )));
        }
        Ok(Dataset {
            locations,
            weeks,
            counts,
            populations,
        })
    }

    pub fn locations(&self) -> &[Location] {
        &self.locations
    }

    pub fn weeks(&self) -> &[i64] {
        &self.weeks
    }

    pub fn n_locations(&self) -> usize {
        self.locations.len()
    }

    pub fn n_weeks(&self) -> usize {
        self.weeks.len()
    }

    pub fn n_cells(&self) -> usize {
        self.counts.len()
    }

    pub fn cell(&self, location: usize, week_index: usize) -> usize {
        location * self.weeks.len() + week_index
    }

    /// `(location index, week index)` of a cell.
    pub fn cell_position(&self, cell: usize) -> (usize, usize) {
        (cell / self.weeks.len(), cell % self.weeks.len())
    }

    pub fn count(&self, cell: usize) -> Option<u64> {
        self.counts[cell]
    }

    pub fn counts(&self) -> &[Option<u64>] {
        &self.counts
    }

    pub fn population(&self, cell: usize) -> f64 {
        self.populations[cell]
    }

    pub fn populations(&self) -> &[f64] {
        &self.populations
    }

    /// Indices of cells with an observed count.
    pub fn observed_cells(&self) -> Vec<usize> {
        (0..self.n_cells()).filter(|&c| self.counts[c].is_some()).collect()
    }

    /// Space-time input of a cell: `(week, lon, lat)` after projection.
    pub fn input(&self, cell: usize, projection: SpatialProjection) -> InputPoint {
        let (i, j) = self.cell_position(cell);
        let loc = &self.locations[i];
        let (x, y) = project(loc, projection, self.mean_latitude());
        InputPoint::space_time(self.weeks[j] as f64, x, y).expect("validated coordinates")
    }

    pub fn inputs(&self, cells: &[usize], projection: SpatialProjection) -> Vec<InputPoint> {
        cells.iter().map(|&c| self.input(c, projection)).collect()
    }

    pub fn mean_latitude(&self) -> f64 {
        if self.locations.is_empty() {
            return 0.0;
        }
        self.locations.iter().map(|l| l.lat).sum::<f64>() / self.locations.len() as f64
    }

    /// Panel restricted to the week indices in `range`.
    pub fn select_weeks(&self, range: std::ops::Range<usize>) -> Dataset {
        let weeks = self.weeks[range.clone()].to_vec();
        let mut counts = Vec::with_capacity(self.n_locations() * weeks.len());
        let mut pops = Vec::with_capacity(counts.capacity());
        for i in 0..self.n_locations() {
            for j in range.clone() {
                let c = self.cell(i, j);
                counts.push(self.counts[c]);
                pops.push(self.populations[c]);
            }
        }
        Dataset {
            locations: self.locations.clone(),
            weeks,
            counts,
            populations: pops,
        }
    }

    /// SHA-256 of a canonical rendering of the panel, hex encoded.
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        for l in &self.locations {
            h.update(format!("L|{}|{:?}|{:?}\n", l.id, l.lon, l.lat));
        }
        for w in &self.weeks {
            h.update(format!("W|{w}\n"));
        }
        for (c, p) in self.counts.iter().zip(&self.populations) {
            match c {
                Some(y) => h.update(format!("C|{y}|{p:?}\n")),
                None => h.update(format!("C|-|{p:?}\n")),
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn project(loc: &Location, projection: SpatialProjection, mean_lat: f64) -> (f64, f64) {
    match projection {
        SpatialProjection::Degrees => (loc.lon, loc.lat),
        SpatialProjection::Equirectangular => (loc.lon * mean_lat.to_radians().cos(), loc.lat),
    }
}

/// Splits off the last `horizon` weeks as a test panel.
pub fn train_test_split(data: &Dataset, horizon: usize) -> Result<(Dataset, Dataset)> {
    let n = data.n_weeks();
    if horizon >= n {
        return Err(Error::domain(format!(
            "forecast horizon {horizon} must be smaller than the {n} weeks of data"
        )));
    }
    Ok((data.select_weeks(0..n - horizon), data.select_weeks(n - horizon..n)))
}
