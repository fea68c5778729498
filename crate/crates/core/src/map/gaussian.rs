use crate::error::{Error, Result};
use crate::geom::{Mat3, Quat, Vec3};

/// Number of scalar parameters per Gaussian.
pub const PARAM_COUNT: usize = 14;

/// One map primitive. Scale and opacity are stored in their optimization
/// parameterizations (log-scale, logit).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian3D {
    pub mu: [f64; 3],
    pub log_scale: [f64; 3],
    /// (w, x, y, z), normalized before use.
    pub rot: [f64; 4],
    pub color: [f64; 3],
    pub opacity_logit: f64,
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

impl Gaussian3D {
    pub fn new(mu: [f64; 3], scale: [f64; 3], rot: Quat, color: [f64; 3], opacity: f64) -> Result<Self> {
        if scale.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::InvalidInput("Gaussian scales must be positive".into()));
        }
        if !(opacity > 0.0 && opacity < 1.0) {
            return Err(Error::InvalidInput("opacity must lie in (0, 1)".into()));
        }
        let g = Gaussian3D {
            mu,
            log_scale: scale.map(f64::ln),
            rot: rot.normalized()?.to_array(),
            color,
            opacity_logit: logit(opacity),
        };
        g.validate()?;
        Ok(g)
    }

    /// Isotropic Gaussian with identity rotation.
    pub fn isotropic(mu: [f64; 3], scale: f64, color: [f64; 3], opacity: f64) -> Result<Self> {
        Gaussian3D::new(mu, [scale; 3], Quat::IDENTITY, color, opacity)
    }

    pub fn scale(&self) -> [f64; 3] {
        self.log_scale.map(f64::exp)
    }

    pub fn opacity(&self) -> f64 {
        sigmoid(self.opacity_logit)
    }

    pub fn quat(&self) -> Quat {
        Quat::from_array(self.rot)
    }

    pub fn position(&self) -> Vec3 {
        Vec3::from(self.mu)
    }

    /// `R S S^T R^T`.
    pub fn covariance(&self) -> Result<Mat3> {
        let r = crate::geom::quat_to_rotation(self.quat())?;
        let s = self.scale();
        let m = r * Mat3::from_diagonal(&Vec3::from(s));
        Ok(m * m.transpose())
    }

    pub fn validate(&self) -> Result<()> {
        let all = self.to_params();
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite Gaussian parameter".into()));
        }
        if self.quat().norm() == 0.0 {
            return Err(Error::InvalidInput("zero rotation quaternion".into()));
        }
        if self.color.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("color outside [0, 1]".into()));
        }
        Ok(())
    }

    /// Rounds every parameter to single precision (the storage precision).
    pub fn quantized(&self) -> Self {
        Gaussian3D::from_params(&self.to_params().map(|v| v as f32 as f64))
    }

    pub fn to_params(&self) -> [f64; PARAM_COUNT] {
        let mut p = [0.0; PARAM_COUNT];
        p[0..3].copy_from_slice(&self.mu);
        p[3..6].copy_from_slice(&self.log_scale);
        p[6..10].copy_from_slice(&self.rot);
        p[10..13].copy_from_slice(&self.color);
        p[13] = self.opacity_logit;
        p
    }

    pub fn from_params(p: &[f64; PARAM_COUNT]) -> Self {
        Gaussian3D {
            mu: [p[0], p[1], p[2]],
            log_scale: [p[3], p[4], p[5]],
            rot: [p[6], p[7], p[8], p[9]],
            color: [p[10], p[11], p[12]],
            opacity_logit: p[13],
        }
    }
}
