use argmin::core::{CostFunction, Executor, State};
use argmin::solver::neldermead::NelderMead;
use serde::{Deserialize, Serialize};

use super::EfficiencyModel;
use crate::error::{Error, Result};
use crate::geometry::ChipGeometry;

/// Observed island signal of one qubit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalObservation {
    pub qubit: String,
    /// Island position [mm].
    pub position: (f64, f64),
    /// [eV]
    pub s_obs: f64,
    /// [eV]; non-finite values drop the qubit.
    pub sigma: f64,
}

/// Δχ² levels of the 1σ, 2σ and 3σ regions for three free parameters.
pub const CONTOUR_LEVELS: [f64; 3] = [3.53, 8.02, 14.16];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Contour {
    pub delta_chi2: f64,
    /// Points where the profiled Δχ² crosses the level, interpolated on the
    /// edges of the scan grid [mm].
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VertexSolution {
    /// [mm]
    pub x: f64,
    pub y: f64,
    /// [eV]
    pub e_tot: f64,
    pub chi2_min: f64,
    /// Qubits entering the χ².
    pub n_qubits: usize,
    /// Nested 1σ, 2σ, 3σ contours.
    pub contours: Vec<Contour>,
    pub fiducial_pass: bool,
    /// All used qubits lie on one line.
    pub collinear: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VertexOptions {
    /// Scan pitch [mm].
    pub pitch: f64,
    pub refine: bool,
}

impl Default for VertexOptions {
    fn default() -> Self {
        Self {
            pitch: 0.05,
            refine: true,
        }
    }
}

/// Weighted data prepared for repeated χ² evaluation.
#[derive(Debug, Clone)]
pub struct Chi2Surface {
    pos: Vec<(f64, f64)>,
    s: Vec<f64>,
    w: Vec<f64>,
    model: EfficiencyModel,
}

impl Chi2Surface {
    pub fn new(obs: &[SignalObservation], model: &EfficiencyModel) -> Result<Self> {
        let used: Vec<&SignalObservation> = obs
            .iter()
            .filter(|o| o.sigma.is_finite() && o.s_obs.is_finite())
            .collect();
        if used.is_empty() {
            return Err(Error::NoInformation("every qubit has an infinite uncertainty".into()));
        }
        if let Some(o) = used.iter().find(|o| !(o.sigma > 0.0)) {
            return Err(Error::Precondition(format!("qubit {} has σ = {}", o.qubit, o.sigma)));
        }
        if used.len() < 3 {
            return Err(Error::Precondition(format!(
                "vertex fit needs at least 3 qubits with finite uncertainty, got {}",
                used.len()
            )));
        }
        Ok(Self {
            pos: used.iter().map(|o| o.position).collect(),
            s: used.iter().map(|o| o.s_obs).collect(),
            w: used.iter().map(|o| o.sigma.powi(-2)).collect(),
            model: *model,
        })
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    fn efficiencies(&self, x: f64, y: f64) -> impl Iterator<Item = f64> + '_ {
        self.pos
            .iter()
            .map(move |(qx, qy)| self.model.efficiency((qx - x).hypot(qy - y)))
    }

    /// χ² at a full parameter point.
    pub fn chi2(&self, x: f64, y: f64, e_tot: f64) -> f64 {
        self.efficiencies(x, y)
            .zip(self.s.iter().zip(&self.w))
            .map(|(f, (s, w))| w * (s - e_tot * f).powi(2))
            .sum()
    }

    /// Energy minimizing χ² at fixed (x, y): the non-negative weighted
    /// least-squares solution, and the χ² there.
    pub fn profile(&self, x: f64, y: f64) -> (f64, f64) {
        let (mut sf, mut ff, mut ss) = (0.0, 0.0, 0.0);
        for (f, (s, w)) in self.efficiencies(x, y).zip(self.s.iter().zip(&self.w)) {
            sf += w * s * f;
            ff += w * f * f;
            ss += w * s * s;
        }
        let e = if ff > 0.0 { (sf / ff).max(0.0) } else { 0.0 };
        // expanded form loses precision near zero; recompute directly there
        let chi2 = ss - 2.0 * e * sf + e * e * ff;
        if chi2 < 1e-6 * ss {
            (e, self.chi2(x, y, e))
        } else {
            (e, chi2.max(0.0))
        }
    }

    fn collinear(&self) -> bool {
        let p = &self.pos;
        let scale = p
            .iter()
            .flat_map(|a| p.iter().map(move |b| (a.0 - b.0).hypot(a.1 - b.1)))
            .fold(0.0, f64::max);
        for i in 0..p.len() {
            for j in i + 1..p.len() {
                for k in j + 1..p.len() {
                    let cross = (p[j].0 - p[i].0) * (p[k].1 - p[i].1) - (p[j].1 - p[i].1) * (p[k].0 - p[i].0);
                    if cross.abs() > 1e-9 * scale * scale {
                        return false;
                    }
                }
            }
        }
        true
    }
}

struct Profiled<'a> {
    surface: &'a Chi2Surface,
    geometry: &'a ChipGeometry,
}

impl CostFunction for Profiled<'_> {
    type Param = Vec<f64>;
    type Output = f64;

    fn cost(&self, p: &Self::Param) -> std::result::Result<f64, argmin::core::Error> {
        if !self.geometry.contains(p[0], p[1]) {
            return Ok(f64::INFINITY);
        }
        Ok(self.surface.profile(p[0], p[1]).1)
    }
}

/// χ² vertex fit: profiled grid scan over the chip, simplex refinement from
/// the best node and Δχ² contours of the profiled surface.
pub fn reconstruct_vertex(
    obs: &[SignalObservation],
    geometry: &ChipGeometry,
    model: &EfficiencyModel,
    opts: &VertexOptions,
) -> Result<VertexSolution> {
    let surface = Chi2Surface::new(obs, model)?;
    let nx = (geometry.width / opts.pitch).round() as usize + 1;
    let ny = (geometry.height / opts.pitch).round() as usize + 1;
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 * opts.pitch).collect();
    let ys: Vec<f64> = (0..ny).map(|j| j as f64 * opts.pitch).collect();
    let mut grid = vec![0.0; nx * ny];
    let mut best = (f64::INFINITY, 0.0, 0.0);
    for (j, &y) in ys.iter().enumerate() {
        for (i, &x) in xs.iter().enumerate() {
            let (_, c) = surface.profile(x, y);
            grid[j * nx + i] = c;
            if c < best.0 {
                best = (c, x, y);
            }
        }
    }
    let (mut chi2_min, mut x, mut y) = best;
    if opts.refine && chi2_min > 0.0 {
        let h = 0.5 * opts.pitch;
        let simplex = vec![vec![x, y], vec![x + h, y], vec![x, y + h]];
        let solver = NelderMead::new(simplex)
            .with_sd_tolerance(1e-14)
            .map_err(|e| Error::Fit(e.to_string()))?;
        let problem = Profiled {
            surface: &surface,
            geometry,
        };
        let res = Executor::new(problem, solver)
            .configure(|s| s.max_iters(400))
            .run()
            .map_err(|e| Error::Fit(e.to_string()))?;
        if let Some(p) = res.state().get_best_param() {
            let c = surface.profile(p[0], p[1]).1;
            if c < chi2_min {
                (chi2_min, x, y) = (c, p[0], p[1]);
            }
        }
    }
    let e_tot = surface.profile(x, y).0;
    let contours = CONTOUR_LEVELS
        .iter()
        .map(|&lvl| Contour {
            delta_chi2: lvl,
            points: crossings(&grid, &xs, &ys, chi2_min + lvl),
        })
        .collect();
    Ok(VertexSolution {
        x,
        y,
        e_tot,
        chi2_min,
        n_qubits: surface.len(),
        contours,
        fiducial_pass: geometry.in_fiducial(x, y),
        collinear: surface.collinear(),
    })
}

/// Marching-squares edge crossings of `level` on a row-major grid.
fn crossings(grid: &[f64], xs: &[f64], ys: &[f64], level: f64) -> Vec<(f64, f64)> {
    let nx = xs.len();
    let at = |i: usize, j: usize| grid[j * nx + i];
    let mut pts = Vec::new();
    let lerp = |a: f64, b: f64| (level - a) / (b - a);
    for j in 0..ys.len() {
        for i in 0..nx {
            let v = at(i, j);
            if i + 1 < nx {
                let u = at(i + 1, j);
                if (v < level) != (u < level) {
                    pts.push((xs[i] + lerp(v, u) * (xs[i + 1] - xs[i]), ys[j]));
                }
            }
            if j + 1 < ys.len() {
                let u = at(i, j + 1);
                if (v < level) != (u < level) {
                    pts.push((xs[i], ys[j] + lerp(v, u) * (ys[j + 1] - ys[j])));
                }
            }
        }
    }
    pts
}

/// Fiducial acceptance of a reconstructed vertex.
pub fn fiducial_cut(v: &VertexSolution, geometry: &ChipGeometry) -> bool {
    geometry.in_fiducial(v.x, v.y)
}
