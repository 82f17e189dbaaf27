use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    /// Camera height above the floor (m).
    pub height: f64,
    pub columns: usize,
    pub rows: usize,
    /// Horizontal field of view (rad).
    pub hfov: f64,
    pub max_range: f64,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { height: 0.25, columns: 64, rows: 32, hfov: 70f64.to_radians(), max_range: 5.0 }
    }
}

impl CameraModel {
    /// Focal length in pixels.
    pub fn focal(&self) -> f64 {
        (self.columns as f64 / 2.0) / libm::tan(self.hfov / 2.0)
    }

    pub fn cx(&self) -> f64 {
        self.columns as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.rows as f64 / 2.0
    }

    /// Azimuth of image column `u` relative to the optical axis; positive to the right.
    pub fn column_azimuth(&self, u: usize) -> f64 {
        libm::atan((u as f64 + 0.5 - self.cx()) / self.focal())
    }

    pub fn is_valid(&self) -> bool {
        self.columns >= 2
            && self.rows >= 2
            && self.hfov > 0.0
            && self.hfov < core::f64::consts::PI
            && self.height > 0.0
            && self.max_range > 0.0
    }
}

/// Pose-estimation noise: drift proportional to motion and a per-step tracking-loss hazard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimationNoiseConfig {
    /// Position drift std per meter traveled.
    pub sigma_pos: f64,
    /// Heading drift std per radian turned.
    pub sigma_theta: f64,
    /// Base tracking-loss probability per step.
    pub loss_p0: f64,
    /// Additional loss probability per rad/s of yaw rate.
    pub loss_k: f64,
}

impl Default for EstimationNoiseConfig {
    fn default() -> Self {
        Self { sigma_pos: 0.02, sigma_theta: 0.02, loss_p0: 0.0005, loss_k: 0.002 }
    }
}

impl EstimationNoiseConfig {
    pub const fn zero() -> Self {
        Self { sigma_pos: 0.0, sigma_theta: 0.0, loss_p0: 0.0, loss_k: 0.0 }
    }

    pub fn is_drift_free(&self) -> bool {
        self.sigma_pos == 0.0 && self.sigma_theta == 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FeatureKind {
    /// Per-column floor boundary, one entry per camera column.
    Boundary,
    /// Planar depth rays spanning the horizontal field of view.
    DepthRays { n_rays: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ObservationConfig {
    pub features: FeatureKind,
    /// Number of stacked frames.
    pub history: usize,
    /// Goal distance normalizer (m).
    pub d_norm: f64,
}

impl Default for ObservationConfig {
    fn default() -> Self {
        Self { features: FeatureKind::Boundary, history: 5, d_norm: 10.0 }
    }
}

impl ObservationConfig {
    pub fn feature_len(&self, camera: &CameraModel) -> usize {
        match self.features {
            FeatureKind::Boundary => camera.columns,
            FeatureKind::DepthRays { n_rays } => n_rays,
        }
    }

    /// Goal distance, heading error, then features.
    pub fn frame_len(&self, camera: &CameraModel) -> usize {
        2 + self.feature_len(camera)
    }

    pub fn input_len(&self, camera: &CameraModel) -> usize {
        self.history * self.frame_len(camera)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub wheel_base: f64,
    pub robot_radius: f64,
    pub v_max: f64,
    pub motor_time_constant: f64,
    /// Multiplicative std on target wheel speed.
    pub actuation_noise_sigma: f64,
    pub max_steps: u32,
    pub goal_radius: f64,
    pub camera: CameraModel,
    pub estimation: EstimationNoiseConfig,
    pub observation: ObservationConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.1,
            wheel_base: 0.15,
            robot_radius: 0.12,
            v_max: 0.5,
            motor_time_constant: 0.2,
            actuation_noise_sigma: 0.05,
            max_steps: 500,
            goal_radius: 0.3,
            camera: CameraModel::default(),
            estimation: EstimationNoiseConfig::default(),
            observation: ObservationConfig::default(),
        }
    }
}

impl SimConfig {
    /// Noise-free variant: no actuation noise, drift, or tracking loss.
    pub fn noiseless(mut self) -> Self {
        self.actuation_noise_sigma = 0.0;
        self.estimation = EstimationNoiseConfig::zero();
        self
    }

    pub fn is_valid(&self) -> bool {
        self.dt > 0.0
            && self.wheel_base > 0.0
            && self.robot_radius > 0.0
            && self.v_max > 0.0
            && self.motor_time_constant >= 0.0
            && self.actuation_noise_sigma >= 0.0
            && self.max_steps >= 1
            && self.goal_radius > 0.0
            && self.camera.is_valid()
            && self.observation.history >= 1
            && self.observation.d_norm > 0.0
            && match self.observation.features {
                FeatureKind::DepthRays { n_rays } => n_rays >= 1,
                FeatureKind::Boundary => true,
            }
    }

    /// Fraction of the gap to the target speed closed in one step.
    pub fn lag_factor(&self) -> f64 {
        if self.motor_time_constant <= 0.0 {
            1.0
        } else {
            1.0 - libm::exp(-self.dt / self.motor_time_constant)
        }
    }
}
