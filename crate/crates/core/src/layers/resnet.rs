//! ResNet-9 builder for plain and cyclic-equivariant models.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ConvKind, FieldNorm, FilterBank, Layer, Linear, Model};
use crate::error::{invalid, Error, Result};
use crate::groups::{CyclicGroup, FieldKind, FieldType};
use crate::scalar::Scalar;

/// Symmetry of a model: the plain `{e}` baseline or a cyclic group `C_N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum GroupSpec {
    Trivial,
    Cyclic(usize),
}

impl GroupSpec {
    pub fn is_equivariant(&self) -> bool {
        matches!(self, GroupSpec::Cyclic(_))
    }
}

impl fmt::Display for GroupSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GroupSpec::Trivial => write!(f, "e"),
            GroupSpec::Cyclic(n) => write!(f, "C{n}"),
        }
    }
}

impl FromStr for GroupSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t == "e" || t == "{e}" {
            return Ok(GroupSpec::Trivial);
        }
        let n = t
            .strip_prefix('C')
            .or_else(|| t.strip_prefix('c'))
            .and_then(|n| n.parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .ok_or_else(|| invalid(format!("unknown group '{s}' (expected e or C<N>)")))?;
        Ok(GroupSpec::Cyclic(n))
    }
}

impl TryFrom<String> for GroupSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GroupSpec> for String {
    fn from(g: GroupSpec) -> String {
        g.to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WidthMode {
    /// Field multiplicity equals the nominal width.
    EqualFields,
    /// Field multiplicity is `ceil(width / sqrt(N))`.
    #[default]
    ParamMatched,
}

pub fn field_multiplicity(width: usize, order: usize, mode: WidthMode) -> usize {
    match mode {
        WidthMode::EqualFields => width,
        WidthMode::ParamMatched => {
            let m = (width as f64 / (order as f64).sqrt()).ceil() as usize;
            m.max(1)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub group: GroupSpec,
    pub widths: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub width_mode: WidthMode,
    /// Restrict `C_N` to `C_{N/2}` after the first residual block (even N > 1).
    #[serde(default = "default_true")]
    pub restrict: bool,
}

fn default_true() -> bool {
    true
}

impl ModelSpec {
    pub fn new(group: GroupSpec, widths: [usize; 3], classes: usize) -> Self {
        Self { group, widths: widths.to_vec(), classes, width_mode: WidthMode::default(), restrict: true }
    }

    pub fn with_width_mode(mut self, mode: WidthMode) -> Self {
        self.width_mode = mode;
        self
    }

    pub fn with_restriction(mut self, on: bool) -> Self {
        self.restrict = on;
        self
    }
}

const KERNEL: usize = 3;

struct Builder<'a, R: ?Sized> {
    equivariant: bool,
    mode: WidthMode,
    rng: &'a mut R,
}

impl<R: Rng + ?Sized> Builder<'_, R> {
    fn conv<T: Scalar>(&mut self, t: &FieldType, width: usize) -> Result<(Layer<T>, FieldType)> {
        let mut bank = if !self.equivariant {
            FilterBank::zeros(ConvKind::Plain, t.group, t.channels(), width, KERNEL)?
        } else {
            let order = t.group.order();
            let kind = match t.kind {
                FieldKind::Trivial => ConvKind::Lift,
                FieldKind::Regular => ConvKind::Group,
            };
            let m = field_multiplicity(width, order, self.mode);
            FilterBank::zeros(kind, t.group, t.channels(), m, KERNEL)?
        };
        bank.init_uniform(self.rng);
        let out = bank.output_type(t)?;
        Ok((Layer::Conv(bank), out))
    }

    /// conv + norm + relu
    fn unit<T: Scalar>(&mut self, t: &FieldType, width: usize, layers: &mut Vec<Layer<T>>) -> Result<FieldType> {
        let (conv, out) = self.conv(t, width)?;
        layers.push(conv);
        layers.push(Layer::FieldNorm(FieldNorm::new(&out)));
        layers.push(Layer::Relu);
        Ok(out)
    }

    fn residual<T: Scalar>(&mut self, t: &FieldType, width: usize) -> Result<Layer<T>> {
        let mut body = Vec::new();
        let mid = self.unit(t, width, &mut body)?;
        let out = self.unit(&mid, width, &mut body)?;
        if out != *t {
            return Err(invalid(format!("residual width {width} changes the field type {t:?}")));
        }
        Ok(Layer::Residual(body))
    }
}

/// Build the 8-conv ResNet-9:
///
/// ```text
/// stem conv(w1) -> conv(w2) + pool -> res(w2) -> [restrict]
///   -> conv(w3) + pool -> conv(w3) + pool3 -> res(w3)
///   -> global avg pool -> [group pool] -> linear
/// ```
///
/// Every conv is followed by field norm and ReLU. The 14 -> 7 and 28 -> 14
/// pools are 2x2/stride 2; the final 7 -> 3 pool uses a 3x3 window with
/// stride 2 so that its windows are symmetric under quarter turns.
pub fn build_resnet9<T: Scalar, R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Model<T>> {
    if spec.widths.len() != 3 || spec.widths.contains(&0) {
        return Err(invalid(format!("widths must be three positive integers, got {:?}", spec.widths)));
    }
    if spec.classes < 2 {
        return Err(invalid("at least two classes are required"));
    }
    let (w1, w2, w3) = (spec.widths[0], spec.widths[1], spec.widths[2]);
    let group = match spec.group {
        GroupSpec::Trivial => CyclicGroup::trivial(),
        GroupSpec::Cyclic(n) => CyclicGroup::new(n)?,
    };
    let input = match spec.group {
        GroupSpec::Trivial => FieldType::plain(3),
        GroupSpec::Cyclic(_) => FieldType::trivial(group, 3),
    };
    let mut b = Builder { equivariant: spec.group.is_equivariant(), mode: spec.width_mode, rng };
    let mut layers: Vec<Layer<T>> = Vec::new();

    let t = b.unit(&input, w1, &mut layers)?;
    let t = b.unit(&t, w2, &mut layers)?;
    layers.push(Layer::MaxPool { kernel: 2, stride: 2 });
    layers.push(b.residual(&t, w2)?);

    let mut t = t;
    if spec.restrict && group.order() > 1 && group.order() % 2 == 0 {
        let r = Layer::restrict(&t)?;
        t = r.output_type(&t)?;
        layers.push(r);
    }

    let t = b.unit(&t, w3, &mut layers)?;
    layers.push(Layer::MaxPool { kernel: 2, stride: 2 });
    let t = b.unit(&t, w3, &mut layers)?;
    layers.push(Layer::MaxPool { kernel: 3, stride: 2 });
    layers.push(b.residual(&t, w3)?);
    let cam = layers.len() - 1;

    layers.push(Layer::GlobalAvgPool);
    let mut feats = t.channels();
    if spec.group.is_equivariant() {
        layers.push(Layer::GroupPool { order: t.group.order() });
        feats = t.multiplicity;
    }
    let mut head = Linear::zeros(feats, spec.classes);
    head.init_uniform(b.rng);
    layers.push(Layer::Linear(head));

    Model::new(layers, input, group, Some(cam))
}
