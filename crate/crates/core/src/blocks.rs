//! Pre-activation residual units: basic, bottleneck and residual-inception.
//!
//! Every convolution inside a residual branch is preceded by BN → ReLU. A unit
//! whose stride is 1 and whose channel count does not change adds its raw input
//! back (identity shortcut); otherwise a strided 1×1 projection of the
//! pre-activated input is added instead.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{GraphBuilder, NodeId, UnitRecord};
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnitVariant {
    Basic,
    Bottleneck,
    Inception,
}

/// Declarative description of one residual unit.
///
/// `widths` is variant specific:
/// * basic: `[w, w]`
/// * bottleneck: `[reduce, spatial, restore]`
/// * inception: `[shared, branch_3x3, double_3x3_mid, double_3x3_out]`
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitSpec {
    pub variant: UnitVariant,
    pub in_channels: usize,
    pub widths: Vec<usize>,
    pub stride: usize,
    pub out_channels: usize,
}

impl UnitSpec {
    pub fn basic(in_channels: usize, width: usize, stride: usize) -> Self {
        UnitSpec {
            variant: UnitVariant::Basic,
            in_channels,
            widths: vec![width, width],
            stride,
            out_channels: width,
        }
    }

    pub fn bottleneck(in_channels: usize, inner: usize, out_channels: usize, stride: usize) -> Self {
        UnitSpec {
            variant: UnitVariant::Bottleneck,
            in_channels,
            widths: vec![inner, inner, out_channels],
            stride,
            out_channels,
        }
    }

    pub fn inception(in_channels: usize, widths: [usize; 4], out_channels: usize, stride: usize) -> Self {
        UnitSpec {
            variant: UnitVariant::Inception,
            in_channels,
            widths: widths.to_vec(),
            stride,
            out_channels,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let expected = match self.variant {
            UnitVariant::Basic => 2,
            UnitVariant::Bottleneck => 3,
            UnitVariant::Inception => 4,
        };
        if self.widths.len() != expected {
            return Err(Error::Unit(format!(
                "{:?} unit needs {} widths, got {}",
                self.variant,
                expected,
                self.widths.len()
            )));
        }
        if !matches!(self.stride, 1 | 2) {
            return Err(Error::Unit(format!("stride must be 1 or 2, got {}", self.stride)));
        }
        if self.in_channels == 0 || self.out_channels == 0 || self.widths.contains(&0) {
            return Err(Error::Unit("channel counts must be positive".into()));
        }
        let last = *self.widths.last().unwrap();
        match self.variant {
            UnitVariant::Basic | UnitVariant::Bottleneck if last != self.out_channels => Err(Error::Unit(format!(
                "last width {} must equal out_channels {}",
                last, self.out_channels
            ))),
            _ => Ok(()),
        }
    }

    /// Channels after concatenating the three inception branches.
    pub fn concat_width(&self) -> Option<usize> {
        (self.variant == UnitVariant::Inception && self.widths.len() == 4)
            .then(|| self.widths[0] + self.widths[1] + self.widths[3])
    }

    pub fn has_identity_shortcut(&self) -> bool {
        self.stride == 1 && self.in_channels == self.out_channels
    }

    pub fn with_stride(&self, stride: usize) -> Self {
        UnitSpec { stride, ..self.clone() }
    }
}

/// Adds the unit under `prefix` and returns its output node.
pub fn add_unit<T: Element>(b: &mut GraphBuilder<T>, prefix: &str, x: NodeId, spec: &UnitSpec) -> Result<NodeId> {
    spec.validate()?;
    let have = b.shape(x)[0];
    if have != spec.in_channels {
        return Err(Error::Unit(format!(
            "unit `{prefix}` declares {} input channels but receives {}",
            spec.in_channels, have
        )));
    }
    match spec.variant {
        UnitVariant::Basic => make_basic_unit(b, prefix, x, spec),
        UnitVariant::Bottleneck => make_bottleneck_unit(b, prefix, x, spec),
        UnitVariant::Inception => make_residual_inception_unit(b, prefix, x, spec),
    }
}

fn shortcut<T: Element>(
    b: &mut GraphBuilder<T>,
    prefix: &str,
    x: NodeId,
    pre: NodeId,
    spec: &UnitSpec,
) -> Result<(NodeId, Option<NodeId>)> {
    if spec.has_identity_shortcut() {
        Ok((x, None))
    } else {
        let proj = b.conv(
            &format!("{prefix}/shortcut"),
            pre,
            spec.out_channels,
            1,
            spec.stride,
            false,
        )?;
        Ok((proj, Some(proj)))
    }
}

fn expect_variant(spec: &UnitSpec, variant: UnitVariant) -> Result<()> {
    if spec.variant != variant {
        return Err(Error::Unit(format!(
            "expected a {variant:?} spec, got {:?}",
            spec.variant
        )));
    }
    spec.validate()
}

/// BN→ReLU→conv3×3(s)→BN→ReLU→conv3×3 plus shortcut.
pub fn make_basic_unit<T: Element>(
    b: &mut GraphBuilder<T>,
    prefix: &str,
    x: NodeId,
    spec: &UnitSpec,
) -> Result<NodeId> {
    expect_variant(spec, UnitVariant::Basic)?;
    let pre = b.pre_activation(prefix, "a", x)?;
    let c1 = b.conv(&format!("{prefix}/conv_a"), pre, spec.widths[0], 3, spec.stride, false)?;
    let mid = b.pre_activation(prefix, "b", c1)?;
    let c2 = b.conv(&format!("{prefix}/conv_b"), mid, spec.widths[1], 3, 1, false)?;
    let (sc, proj) = shortcut(b, prefix, x, pre, spec)?;
    let out = b.add(&format!("{prefix}/add"), c2, sc)?;
    b.record_unit(UnitRecord {
        name: prefix.to_string(),
        spec: spec.clone(),
        input: x,
        output: out,
        shortcut_projection: proj,
        branch_origin: None,
        concat: None,
    });
    Ok(out)
}

/// 1×1 reduce → 3×3(s) → 1×1 restore, each pre-activated, plus shortcut.
pub fn make_bottleneck_unit<T: Element>(
    b: &mut GraphBuilder<T>,
    prefix: &str,
    x: NodeId,
    spec: &UnitSpec,
) -> Result<NodeId> {
    expect_variant(spec, UnitVariant::Bottleneck)?;
    let pre = b.pre_activation(prefix, "a", x)?;
    let c1 = b.conv(&format!("{prefix}/conv_a"), pre, spec.widths[0], 1, 1, false)?;
    let p2 = b.pre_activation(prefix, "b", c1)?;
    let c2 = b.conv(&format!("{prefix}/conv_b"), p2, spec.widths[1], 3, spec.stride, false)?;
    let p3 = b.pre_activation(prefix, "c", c2)?;
    let c3 = b.conv(&format!("{prefix}/conv_c"), p3, spec.widths[2], 1, 1, false)?;
    let (sc, proj) = shortcut(b, prefix, x, pre, spec)?;
    let out = b.add(&format!("{prefix}/add"), c3, sc)?;
    b.record_unit(UnitRecord {
        name: prefix.to_string(),
        spec: spec.clone(),
        input: x,
        output: out,
        shortcut_projection: proj,
        branch_origin: None,
        concat: None,
    });
    Ok(out)
}

/// Residual-inception unit.
///
/// A shared 1×1 conv (carrying the unit stride) feeds three branches: its own
/// output (extent 1), one 3×3 (extent 3) and two stacked 3×3 (extent 5). The
/// branches are concatenated in that order, projected back to `out_channels`
/// by a pre-activated 1×1 conv and added to the shortcut.
pub fn make_residual_inception_unit<T: Element>(
    b: &mut GraphBuilder<T>,
    prefix: &str,
    x: NodeId,
    spec: &UnitSpec,
) -> Result<NodeId> {
    expect_variant(spec, UnitVariant::Inception)?;
    let [shared_w, b_w, c1_w, c2_w] = [spec.widths[0], spec.widths[1], spec.widths[2], spec.widths[3]];
    let pre = b.pre_activation(prefix, "a", x)?;
    let shared = b.conv(&format!("{prefix}/conv_shared"), pre, shared_w, 1, spec.stride, false)?;

    let pb = b.pre_activation(prefix, "b", shared)?;
    let branch_b = b.conv(&format!("{prefix}/conv_b"), pb, b_w, 3, 1, false)?;

    let pc1 = b.pre_activation(prefix, "c1", shared)?;
    let c1 = b.conv(&format!("{prefix}/conv_c1"), pc1, c1_w, 3, 1, false)?;
    let pc2 = b.pre_activation(prefix, "c2", c1)?;
    let branch_c = b.conv(&format!("{prefix}/conv_c2"), pc2, c2_w, 3, 1, false)?;

    let cat = b.concat(&format!("{prefix}/concat"), &[shared, branch_b, branch_c])?;
    let pp = b.pre_activation(prefix, "proj", cat)?;
    let proj = b.conv(&format!("{prefix}/conv_proj"), pp, spec.out_channels, 1, 1, false)?;

    let (sc, sc_proj) = shortcut(b, prefix, x, pre, spec)?;
    let out = b.add(&format!("{prefix}/add"), proj, sc)?;
    b.record_unit(UnitRecord {
        name: prefix.to_string(),
        spec: spec.clone(),
        input: x,
        output: out,
        shortcut_projection: sc_proj,
        branch_origin: Some(shared),
        concat: Some(cat),
    });
    Ok(out)
}
