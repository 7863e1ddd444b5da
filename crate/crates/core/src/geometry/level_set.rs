//! Level-set descriptions of the physical domain. Negative values are inside.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LevelSet {
    /// Disc `|x - center| < radius`.
    Circle {
        center: [f64; 2],
        radius: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    /// Half-plane `normal . x < offset`.
    HalfPlane {
        normal: [f64; 2],
        offset: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    /// Axis-aligned rectangle.
    Rectangle {
        min: [f64; 2],
        max: [f64; 2],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        tag: Option<String>,
    },
    Union { members: Vec<LevelSet> },
    Intersection { members: Vec<LevelSet> },
    Complement { of: Box<LevelSet> },
}

impl LevelSet {
    pub fn circle(center: [f64; 2], radius: f64) -> Self {
        LevelSet::Circle { center, radius, tag: None }
    }

    pub fn half_plane(normal: [f64; 2], offset: f64) -> Self {
        LevelSet::HalfPlane { normal, offset, tag: None }
    }

    pub fn rectangle(min: [f64; 2], max: [f64; 2]) -> Self {
        LevelSet::Rectangle { min, max, tag: None }
    }

    pub fn complement(self) -> Self {
        LevelSet::Complement { of: Box::new(self) }
    }

    /// Attach a boundary tag to a primitive; composites are returned unchanged.
    pub fn tagged(self, name: &str) -> Self {
        let t = Some(name.to_string());
        match self {
            LevelSet::Circle { center, radius, .. } => LevelSet::Circle { center, radius, tag: t },
            LevelSet::HalfPlane { normal, offset, .. } => LevelSet::HalfPlane { normal, offset, tag: t },
            LevelSet::Rectangle { min, max, .. } => LevelSet::Rectangle { min, max, tag: t },
            other => other,
        }
    }

    pub fn evaluate(&self, p: [f64; 2]) -> f64 {
        self.eval_tagged(p).0
    }

    /// Value together with the tag of the primitive that determines it.
    fn eval_tagged(&self, p: [f64; 2]) -> (f64, Option<&str>) {
        match self {
            LevelSet::Circle { center, radius, tag } => {
                let d = ((p[0] - center[0]).powi(2) + (p[1] - center[1]).powi(2)).sqrt();
                (d - radius, tag.as_deref())
            }
            LevelSet::HalfPlane { normal, offset, tag } => {
                let n = (normal[0] * normal[0] + normal[1] * normal[1]).sqrt();
                ((normal[0] * p[0] + normal[1] * p[1] - offset) / n, tag.as_deref())
            }
            LevelSet::Rectangle { min, max, tag } => {
                let c = [0.5 * (min[0] + max[0]), 0.5 * (min[1] + max[1])];
                let half = [0.5 * (max[0] - min[0]), 0.5 * (max[1] - min[1])];
                let q = [(p[0] - c[0]).abs() - half[0], (p[1] - c[1]).abs() - half[1]];
                let outside = (q[0].max(0.0).powi(2) + q[1].max(0.0).powi(2)).sqrt();
                (outside + q[0].max(q[1]).min(0.0), tag.as_deref())
            }
            LevelSet::Union { members } => members
                .iter()
                .map(|m| m.eval_tagged(p))
                .fold((f64::INFINITY, None), |a, b| if b.0 < a.0 { b } else { a }),
            LevelSet::Intersection { members } => members
                .iter()
                .map(|m| m.eval_tagged(p))
                .fold((f64::NEG_INFINITY, None), |a, b| if b.0 > a.0 { b } else { a }),
            LevelSet::Complement { of } => {
                let (v, t) = of.eval_tagged(p);
                (-v, t)
            }
        }
    }

    /// Tag of the primitive whose zero set is closest to being active at `p`.
    pub fn tag_at(&self, p: [f64; 2]) -> Option<String> {
        self.eval_tagged(p).1.map(str::to_string)
    }

    pub fn is_inside(&self, p: [f64; 2]) -> bool {
        self.evaluate(p) <= 0.0
    }

    /// Central-difference gradient with step `h`.
    pub fn gradient(&self, p: [f64; 2], h: f64) -> [f64; 2] {
        [
            (self.evaluate([p[0] + h, p[1]]) - self.evaluate([p[0] - h, p[1]])) / (2.0 * h),
            (self.evaluate([p[0], p[1] + h]) - self.evaluate([p[0], p[1] - h])) / (2.0 * h),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives_sign_convention() {
        let c = LevelSet::circle([0.5, 0.5], 0.3);
        assert!(c.evaluate([0.5, 0.5]) < 0.0);
        assert!(c.evaluate([0.0, 0.0]) > 0.0);
        assert!((c.evaluate([0.8, 0.5])).abs() < 1e-15);
        let h = LevelSet::half_plane([2.0, 0.0], 1.0);
        assert!((h.evaluate([0.25, 7.0]) + 0.25).abs() < 1e-15);
        let r = LevelSet::rectangle([0.0, 0.0], [1.0, 2.0]);
        assert!((r.evaluate([0.5, 1.0]) + 0.5).abs() < 1e-15);
        assert!((r.evaluate([2.0, 3.0]) - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn composition_and_tags() {
        let annulus = LevelSet::Intersection {
            members: vec![
                LevelSet::circle([0.0, 0.0], 0.1).tagged("inner").complement(),
                LevelSet::circle([0.0, 0.0], 0.2).tagged("outer"),
            ],
        };
        assert!(annulus.evaluate([0.15, 0.0]) < 0.0);
        assert!(annulus.evaluate([0.05, 0.0]) > 0.0);
        assert!(annulus.evaluate([0.25, 0.0]) > 0.0);
        assert_eq!(annulus.tag_at([0.1, 0.0]).as_deref(), Some("inner"));
        assert_eq!(annulus.tag_at([0.0, 0.2]).as_deref(), Some("outer"));
        let g = annulus.gradient([0.0, 0.2], 1e-6);
        assert!((g[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn serde_roundtrip() {
        let ls = LevelSet::Union {
            members: vec![
                LevelSet::circle([0.3, 0.3], 0.1).tagged("hole"),
                LevelSet::half_plane([1.0, 0.0], 0.5),
            ],
        };
        let s = toml::to_string(&ls).unwrap();
        let back: LevelSet = toml::from_str(&s).unwrap();
        assert_eq!(back, ls);
    }
}
