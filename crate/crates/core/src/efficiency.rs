//! MAC and parameter accounting, and the width-multiplier sweep.
//!
//! Convention: one multiply-add is one MAC. Standard convolutions count
//! `C_in * C_out * k * k * H_out * W_out`, depthwise ones `C * k * k * H_out * W_out`
//! and pointwise ones `C_in * C_out * H_out * W_out`. Activations, upsampling,
//! normalization and bias additions are not counted. Parameters include
//! weights, biases and the affine batch-norm parameters.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::models::{AutoencoderSpec, ConvKind, PlannedConv};

pub const MAC_CONVENTION: &str = "1 multiply-add = 1 MAC; convolutions only (activations, upsampling, \
normalization and bias additions excluded); params include weights, biases and batch-norm affine terms";

/// Published costs of the detectors compared against, in Gops and millions of parameters.
pub const REFERENCE_DETECTORS: [(&str, f64, f64); 2] =
    [("Faster R-CNN", 206.452, 41.75), ("YOLOv5s", 5.545, 7.277)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCost {
    pub name: String,
    pub macs: u64,
    pub params: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    /// Total MACs in units of 1e9.
    pub macs_gops: f64,
    /// Total parameters in units of 1e6.
    pub params_m: f64,
    pub total_macs: u64,
    pub total_params: u64,
    /// `(height, width)`
    pub input_resolution: (usize, usize),
    pub layers: Vec<LayerCost>,
    pub convention: String,
}

impl EfficiencyReport {
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| layer | MACs | params |\n|---|---|---|\n");
        for l in &self.layers {
            s += &format!("| {} | {} | {} |\n", l.name, l.macs, l.params);
        }
        s += &format!(
            "| **total** | {} ({:.3} Gops) | {} ({:.3} M) |\n\n",
            self.total_macs, self.macs_gops, self.total_params, self.params_m
        );
        s += "| model | MACs (Gops) | params (M) |\n|---|---|---|\n";
        s += &format!("| obfuscator | {:.3} | {:.3} |\n", self.macs_gops, self.params_m);
        for (name, g, p) in REFERENCE_DETECTORS {
            s += &format!("| {name} (published) | {g} | {p} |\n");
        }
        s += &format!(
            "\nInput {}x{} (HxW). {}.\n",
            self.input_resolution.0, self.input_resolution.1, self.convention
        );
        s
    }
}

/// MACs and parameters of one planned convolution.
pub fn conv_cost(c: &PlannedConv) -> LayerCost {
    let k2 = (c.kernel * c.kernel) as u64;
    let hw = (c.out_height * c.out_width) as u64;
    let (cin, cout) = (c.in_channels as u64, c.out_channels as u64);
    let (macs, weights) = match c.kind {
        ConvKind::Standard => (cin * cout * k2 * hw, cin * cout * k2),
        ConvKind::Depthwise => (cin * k2 * hw, cin * k2),
        ConvKind::Pointwise => (cin * cout * hw, cin * cout),
    };
    let bias = if c.bias { cout } else { 0 };
    let bn = if c.batch_norm { 2 * cout } else { 0 };
    LayerCost {
        name: c.name.clone(),
        macs,
        params: weights + bias + bn,
    }
}

/// Sums the per-layer costs of a list of convolutions.
pub fn report_for(layers: &[PlannedConv], input_resolution: (usize, usize)) -> EfficiencyReport {
    let layers: Vec<LayerCost> = layers.iter().map(conv_cost).collect();
    let total_macs = layers.iter().map(|l| l.macs).sum();
    let total_params = layers.iter().map(|l| l.params).sum();
    EfficiencyReport {
        macs_gops: total_macs as f64 / 1e9,
        params_m: total_params as f64 / 1e6,
        total_macs,
        total_params,
        input_resolution,
        layers,
        convention: MAC_CONVENTION.to_string(),
    }
}

/// Cost of one forward pass of `spec` at `(height, width)`.
pub fn count_macs(spec: &AutoencoderSpec, height: usize, width: usize) -> Result<EfficiencyReport> {
    Ok(report_for(&spec.layer_plan_at(height, width)?, (height, width)))
}

/// Parameters of `spec` in millions.
pub fn count_params(spec: &AutoencoderSpec) -> Result<f64> {
    Ok(report_for(&spec.layer_plan()?, (spec.input_height, spec.input_width)).params_m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    pub macs_gops: f64,
    pub params_m: f64,
    pub person_ap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Builds, trains and evaluates one spec per width multiplier. `train_eval`
/// returns the person AP of the trained obfuscator. Failures are recorded
/// per point and the sweep carries on.
pub fn width_sweep(
    alphas: &[f64],
    base: &AutoencoderSpec,
    mut train_eval: impl FnMut(&AutoencoderSpec) -> Result<f64>,
) -> Vec<SweepPoint> {
    alphas
        .iter()
        .map(|&alpha| {
            let spec = base.clone().with_width_multiplier(alpha);
            let cost = spec.validate().and_then(|_| count_macs(&spec, spec.input_height, spec.input_width));
            let (macs_gops, params_m) = cost.as_ref().map_or((f64::NAN, f64::NAN), |r| (r.macs_gops, r.params_m));
            let result = cost.and_then(|_| train_eval(&spec));
            match result {
                Ok(ap) => SweepPoint {
                    alpha,
                    macs_gops,
                    params_m,
                    person_ap: Some(ap),
                    error: None,
                },
                Err(e) => {
                    log::warn!("sweep point alpha={alpha} failed: {e}");
                    SweepPoint {
                        alpha,
                        macs_gops,
                        params_m,
                        person_ap: None,
                        error: Some(e.to_string()),
                    }
                }
            }
        })
        .collect()
}

pub const SWEEP_X_LABEL: &str = "MACs (Gops)";
pub const SWEEP_Y_LABEL: &str = "Person AP (%)";

/// Scatter-and-line plot of person AP against MACs.
pub fn sweep_svg(points: &[SweepPoint], title: &str) -> String {
    let (w, h, m) = (640.0, 420.0, 60.0);
    let mut pts: Vec<(f64, f64, f64)> = points
        .iter()
        .filter_map(|p| p.person_ap.map(|ap| (p.macs_gops, ap, p.alpha)))
        .filter(|(x, _, _)| x.is_finite())
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let xmax = pts.iter().map(|p| p.0).fold(0.0, f64::max).max(1e-9) * 1.1;
    let sx = |x: f64| m + x / xmax * (w - 2.0 * m);
    let sy = |y: f64| h - m - y / 100.0 * (h - 2.0 * m);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    );
    s += &format!("<title>{title}</title>\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    s += &format!(
        "<line x1=\"{m}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        h - m,
        w - m,
        h - m
    );
    s += &format!("<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{}\" stroke=\"black\"/>\n", h - m);
    for i in 0..=5 {
        let y = i as f64 * 20.0;
        s += &format!(
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{y}</text>\n",
            m - 6.0,
            sy(y) + 4.0
        );
        let x = xmax * i as f64 / 5.0;
        s += &format!(
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{x:.4}</text>\n",
            sx(x),
            h - m + 18.0
        );
    }
    s += &format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{SWEEP_X_LABEL}</text>\n",
        w / 2.0,
        h - 15.0
    );
    s += &format!(
        "<text x=\"15\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 15 {})\">{SWEEP_Y_LABEL}</text>\n",
        h / 2.0,
        h / 2.0
    );
    if !pts.is_empty() {
        let path: Vec<String> = pts.iter().map(|p| format!("{:.1},{:.1}", sx(p.0), sy(p.1))).collect();
        s += &format!("<polyline fill=\"none\" stroke=\"steelblue\" points=\"{}\"/>\n", path.join(" "));
    }
    for (x, y, a) in &pts {
        s += &format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"4\" fill=\"steelblue\"><title>alpha {a}: {x:.4} Gops, AP {y:.2}</title></circle>\n",
            sx(*x),
            sy(*y)
        );
    }
    s += "</svg>\n";
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::{build_autoencoder, Role, Stage};

    fn planned(kind: ConvKind, cin: usize, cout: usize, bias: bool) -> PlannedConv {
        PlannedConv {
            name: "l".into(),
            kind,
            in_channels: cin,
            out_channels: cout,
            kernel: if kind == ConvKind::Pointwise { 1 } else { 3 },
            stride: 1,
            out_height: 10,
            out_width: 10,
            bias,
            batch_norm: false,
            upsample_before: false,
        }
    }

    #[test]
    fn micro_specs_match_closed_form() {
        assert_eq!(conv_cost(&planned(ConvKind::Standard, 3, 8, false)).macs, 21_600);
        assert_eq!(conv_cost(&planned(ConvKind::Depthwise, 8, 8, false)).macs, 7_200);
        assert_eq!(conv_cost(&planned(ConvKind::Standard, 3, 8, true)).params, 224);
        assert_eq!(conv_cost(&planned(ConvKind::Pointwise, 8, 16, false)).macs, 12_800);
        let empty = report_for(&[], (8, 8));
        assert_eq!((empty.total_macs, empty.total_params), (0, 0));
    }

    #[test]
    fn totals_are_sums_and_params_match_the_built_model() {
        let spec = AutoencoderSpec::default().with_resolution(48, 64);
        let r = count_macs(&spec, 48, 64).unwrap();
        assert_eq!(r.total_macs, r.layers.iter().map(|l| l.macs).sum::<u64>());
        assert_eq!(r.total_params, r.layers.iter().map(|l| l.params).sum::<u64>());
        let model = build_autoencoder(&spec, Role::Obfuscator, 0).unwrap();
        assert_eq!(r.total_params as usize, model.num_params());
    }

    #[test]
    fn macs_grow_with_width() {
        let base = AutoencoderSpec::default();
        let macs: Vec<u64> = [0.25, 0.5, 0.75, 1.0]
            .iter()
            .map(|&a| count_macs(&base.clone().with_width_multiplier(a), 200, 320).unwrap().total_macs)
            .collect();
        assert!(macs.windows(2).all(|w| w[0] < w[1]), "{macs:?}");
    }

    #[test]
    fn incompatible_resolution_is_config_error() {
        let spec = AutoencoderSpec {
            encoder: vec![Stage { channels: 8, stride: 2 }],
            ..AutoencoderSpec::default()
        };
        assert!(matches!(count_macs(&spec, 33, 64), Err(crate::Error::Config(_))));
    }

    #[test]
    fn sweep_records_failures_and_plots_axes() {
        let pts = width_sweep(&[1.0, 0.5, 2.0], &AutoencoderSpec::default(), |s| {
            Ok(50.0 + 10.0 * s.width_multiplier)
        });
        assert_eq!(pts.len(), 3);
        assert!(pts[2].error.is_some());
        assert!(pts[0].macs_gops > pts[1].macs_gops);
        let svg = sweep_svg(&pts, "sweep");
        assert!(svg.contains(SWEEP_X_LABEL) && svg.contains(SWEEP_Y_LABEL));
        assert_eq!(svg.matches("<circle").count(), 2);
    }
}
