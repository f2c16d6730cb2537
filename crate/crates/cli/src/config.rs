//! Experiment configuration: one JSON document with a block per command.
//! Every block has defaults, so `{"domain": {"kind": "disk", "radius": 1.0}}`
//! is a complete config.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use spectral_turnpike::{build_grid, GridDomain, ScalarField, Shape};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainSpec {
    Rectangle {
        width: f64,
        height: f64,
    },
    Disk {
        radius: f64,
    },
    /// `rows` are drawn top to bottom; `#` marks cells inside the domain.
    Mask {
        width: f64,
        height: f64,
        rows: Vec<String>,
    },
}

impl DomainSpec {
    pub fn shape(&self) -> Shape {
        match self {
            DomainSpec::Rectangle { width, height } => Shape::rectangle(*width, *height),
            DomainSpec::Disk { radius } => Shape::disk(*radius),
            DomainSpec::Mask { width, height, rows } => {
                let cols = rows.first().map_or(0, |r| r.chars().count());
                let cells = rows.iter().rev().flat_map(|r| r.chars().map(|c| c == '#')).collect();
                Shape::Mask {
                    width: *width,
                    height: *height,
                    cols,
                    rows: rows.len(),
                    cells,
                }
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerConfig {
    pub n_starts: usize,
    /// `L^1` stopping distance; one cell area when absent.
    pub fp_tol: Option<f64>,
    pub max_iter: usize,
    /// Relative to the Dirichlet ground eigenvalue.
    pub cluster_tol_rel: f64,
    /// Relative to the domain measure.
    pub beta_rel: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            n_starts: 8,
            fp_tol: None,
            max_iter: 500,
            cluster_tol_rel: 1e-6,
            beta_rel: 0.05,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct StabilityConfig {
    /// Shell radii as fractions of the mass `V0`.
    pub delta_fractions: Vec<f64>,
    pub n_per_delta: usize,
    pub local_descent: bool,
}

impl Default for StabilityConfig {
    fn default() -> Self {
        StabilityConfig {
            delta_fractions: vec![0.05, 0.1, 0.2, 0.5],
            n_per_delta: 100,
            local_descent: true,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct BathtubConfig {
    pub delta_fractions: Vec<f64>,
    pub n_per_delta: usize,
}

impl Default for BathtubConfig {
    fn default() -> Self {
        BathtubConfig {
            delta_fractions: vec![0.02, 0.05, 0.1, 0.2],
            n_per_delta: 200,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    /// Largest displacement of the deformation, in cells, for each probe.
    pub displacement_cells: Vec<f64>,
    /// Support radius of the deformation fields relative to the radius of
    /// the ball with mass `V0`.
    pub support_factor: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        ShapeConfig {
            displacement_cells: vec![-2.0, -1.0, 1.0, 2.0],
            support_factor: 1.5,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    Uniform,
    Gaussian {
        center: [f64; 2],
        width: f64,
    },
    /// Indicator of the box `[x0, x1] x [y0, y1]`, given as `[x0, y0, x1, y1]`.
    Indicator {
        region: [f64; 4],
    },
}

impl InitialState {
    pub fn field(&self, grid: &Arc<GridDomain>) -> spectral_turnpike::Result<ScalarField> {
        match *self {
            InitialState::Uniform => Ok(ScalarField::constant(grid, 1.0)),
            InitialState::Gaussian { center, width } => ScalarField::from_fn(grid, |x, y| {
                (-((x - center[0]).powi(2) + (y - center[1]).powi(2)) / (2.0 * width * width)).exp()
            }),
            InitialState::Indicator { region } => ScalarField::from_fn(grid, |x, y| {
                if x >= region[0] && x <= region[2] && y >= region[1] && y <= region[3] {
                    1.0
                } else {
                    0.0
                }
            }),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ControlConfig {
    pub t_list: Vec<f64>,
    pub nt_per_unit: f64,
    pub max_iter: usize,
    pub y0: InitialState,
    /// Dump every `dump_stride`-th control slice; 0 disables slice dumps.
    pub dump_stride: usize,
}

impl Default for ControlConfig {
    fn default() -> Self {
        ControlConfig {
            t_list: vec![1.0, 2.0, 4.0, 8.0],
            nt_per_unit: 64.0,
            max_iter: 60,
            y0: InitialState::Uniform,
            dump_stride: 0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainSpec,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    #[serde(default = "default_v0_fraction")]
    pub v0_fraction: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub stability: StabilityConfig,
    #[serde(default)]
    pub bathtub: BathtubConfig,
    #[serde(default)]
    pub shape: ShapeConfig,
    #[serde(default)]
    pub control: ControlConfig,
}

fn default_resolution() -> usize {
    64
}

fn default_v0_fraction() -> f64 {
    0.3
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// A problem with one config field.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub path: String,
    pub reason: String,
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.reason)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, Diagnostic> {
        serde_json::from_str(text).map_err(|e| Diagnostic {
            path: "<document>".into(),
            reason: e.to_string(),
        })
    }

    pub fn grid(&self) -> spectral_turnpike::Result<Arc<GridDomain>> {
        build_grid(self.domain.shape(), self.resolution)
    }

    /// Returns every problem found; an empty list means the config is valid.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut out = Vec::new();
        let mut bad = |path: &str, reason: String| {
            out.push(Diagnostic {
                path: path.into(),
                reason,
            })
        };
        let positive = |v: f64| v.is_finite() && v > 0.0;

        match &self.domain {
            DomainSpec::Rectangle { width, height } => {
                if !positive(*width) {
                    bad("domain.width", format!("must be positive, got {width}"));
                }
                if !positive(*height) {
                    bad("domain.height", format!("must be positive, got {height}"));
                }
            }
            DomainSpec::Disk { radius } => {
                if !positive(*radius) {
                    bad("domain.radius", format!("must be positive, got {radius}"));
                }
            }
            DomainSpec::Mask { width, height, rows } => {
                if !positive(*width) || !positive(*height) {
                    bad("domain", "mask width and height must be positive".into());
                }
                let cols = rows.first().map_or(0, |r| r.chars().count());
                if cols == 0 {
                    bad("domain.rows", "mask has no cells".into());
                }
                for (k, r) in rows.iter().enumerate() {
                    if r.chars().count() != cols {
                        bad(&format!("domain.rows[{k}]"), format!("expected {cols} characters"));
                    }
                    if r.chars().any(|c| c != '#' && c != '.') {
                        bad(&format!("domain.rows[{k}]"), "only '#' and '.' are allowed".into());
                    }
                }
            }
        }
        if self.resolution < 4 {
            bad("resolution", format!("must be at least 4, got {}", self.resolution));
        }
        if !(self.v0_fraction > 0.0 && self.v0_fraction < 1.0) {
            bad("v0_fraction", format!("must lie in (0, 1), got {}", self.v0_fraction));
        }

        let o = &self.optimizer;
        if o.n_starts == 0 {
            bad("optimizer.n_starts", "must be at least 1".into());
        }
        if o.max_iter == 0 {
            bad("optimizer.max_iter", "must be at least 1".into());
        }
        if let Some(t) = o.fp_tol {
            if !positive(t) {
                bad("optimizer.fp_tol", format!("must be positive, got {t}"));
            }
        }
        if !positive(o.cluster_tol_rel) {
            bad("optimizer.cluster_tol_rel", "must be positive".into());
        }
        if !(o.beta_rel >= 0.0 && o.beta_rel < 1.0) {
            bad("optimizer.beta_rel", "must lie in [0, 1)".into());
        }

        if self.stability.n_per_delta == 0 {
            bad("stability.n_per_delta", "must be at least 1".into());
        }
        if self.bathtub.n_per_delta == 0 {
            bad("bathtub.n_per_delta", "must be at least 1".into());
        }
        let s = &self.shape;
        if s.displacement_cells.is_empty() || s.displacement_cells.iter().any(|t| !t.is_finite() || *t == 0.0) {
            bad(
                "shape.displacement_cells",
                "must be a nonempty list of finite nonzero values".into(),
            );
        }
        if !positive(s.support_factor) {
            bad("shape.support_factor", "must be positive".into());
        }

        let c = &self.control;
        if c.t_list.is_empty() {
            bad("control.t_list", "must not be empty".into());
        }
        if c.t_list.iter().any(|t| !positive(*t)) {
            bad("control.t_list", "horizons must be positive".into());
        }
        if c.t_list.windows(2).any(|w| !(w[0] < w[1])) {
            bad("control.t_list", "not sorted in strictly increasing order".into());
        }
        if !positive(c.nt_per_unit) {
            bad("control.nt_per_unit", "must be positive".into());
        }
        if c.max_iter == 0 {
            bad("control.max_iter", "must be at least 1".into());
        }
        match c.y0 {
            InitialState::Uniform => {}
            InitialState::Gaussian { center, width } => {
                if !positive(width) {
                    bad("control.y0.width", format!("must be positive, got {width}"));
                }
                if center.iter().any(|v| !v.is_finite()) {
                    bad("control.y0.center", "must be finite".into());
                }
            }
            InitialState::Indicator { region } => {
                if !(region[0] < region[2] && region[1] < region[3]) {
                    bad(
                        "control.y0.region",
                        "expected [x0, y0, x1, y1] with x0 < x1 and y0 < y1".into(),
                    );
                }
            }
        }

        // checks that need the lattice
        if out.is_empty() {
            match self.grid() {
                Err(e) => out.push(Diagnostic {
                    path: "domain".into(),
                    reason: e.to_string(),
                }),
                Ok(grid) => self.validate_on_grid(&grid, &mut out),
            }
        }
        out
    }

    fn validate_on_grid(&self, grid: &Arc<GridDomain>, out: &mut Vec<Diagnostic>) {
        let v0 = self.v0(grid);
        let floor = 2.0 * grid.cell_area();
        for (block, fracs) in [
            ("stability", &self.stability.delta_fractions),
            ("bathtub", &self.bathtub.delta_fractions),
        ] {
            let path = format!("{block}.delta_fractions");
            if fracs.is_empty() {
                out.push(Diagnostic {
                    path: path.clone(),
                    reason: "must not be empty".into(),
                });
            }
            if fracs.windows(2).any(|w| !(w[0] < w[1])) {
                out.push(Diagnostic {
                    path: path.clone(),
                    reason: "not sorted in strictly increasing order".into(),
                });
            }
            for (k, f) in fracs.iter().enumerate() {
                let delta = f * v0;
                if !(f.is_finite() && *f > 0.0) {
                    out.push(Diagnostic {
                        path: format!("{path}[{k}]"),
                        reason: format!("must be positive, got {f}"),
                    });
                } else if delta < floor {
                    out.push(Diagnostic {
                        path: format!("{path}[{k}]"),
                        reason: format!("delta below one-cell floor ({delta:e} < 2 h^2 = {floor:e})"),
                    });
                }
            }
        }
        if let Ok(y0) = self.control.y0.field(grid) {
            if y0.values().iter().all(|&v| v == 0.0) {
                out.push(Diagnostic {
                    path: "control.y0".into(),
                    reason: "initial state vanishes on every cell".into(),
                });
            }
        }
    }

    /// Mass budget `V0 = v0_fraction * |Omega|` on the lattice.
    pub fn v0(&self, grid: &GridDomain) -> f64 {
        self.v0_fraction * grid.measure()
    }
}
