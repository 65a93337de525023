use crate::autodiff::{softmax, Tape, Var};
use crate::data::BoundingBox;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

use super::network::{rng, LayerSpec, Network, Params};
use super::{param_entries, take_params, Architecture};

/// Single-object detector: a shared convolutional trunk feeding a category
/// head (including a background category) and a 4-value box head squashed
/// into `[0,1]` by a sigmoid.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    trunk: Network,
    class_head: Network,
    box_head: Network,
    categories: usize,
}

/// Tape handles produced by one detector forward pass.
#[derive(Debug, Clone)]
pub struct DetectorVars {
    pub class_logits: Var,
    /// Box after the sigmoid.
    pub bbox: Var,
    pub params: Vec<(Var, Var)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub category: usize,
    pub probabilities: Tensor,
    pub bbox: BoundingBox,
}

impl Detection {
    pub fn confidence(&self) -> f32 {
        self.probabilities.data()[self.category]
    }
}

pub const BOX_VALUES: usize = 4;

impl DetectorModel {
    pub fn default_trunk() -> Vec<LayerSpec> {
        let conv = |filters| LayerSpec::Conv {
            filters,
            kernel: 3,
            stride: 2,
            padding: 1,
        };
        vec![
            LayerSpec::Scale {
                factor: 1.0 / 255.0,
                offset: 128.0,
            },
            conv(8),
            LayerSpec::Relu,
            conv(16),
            LayerSpec::Relu,
            conv(16),
            LayerSpec::Relu,
        ]
    }

    pub fn new(input_shape: &[usize], categories: usize, trunk: Vec<LayerSpec>, init_scale: f32, seed: u64) -> Result<Self> {
        let mut r = rng(seed);
        let trunk = Network::init(input_shape, trunk, init_scale, &mut r)?;
        let features = trunk.output_shape();
        let class_head = Network::init(&features, vec![LayerSpec::Dense { units: categories }], init_scale, &mut r)?;
        let box_head = Network::init(&features, vec![LayerSpec::Dense { units: BOX_VALUES }], init_scale, &mut r)?;
        Self::from_networks(trunk, class_head, box_head, categories)
    }

    fn from_networks(trunk: Network, class_head: Network, box_head: Network, categories: usize) -> Result<Self> {
        if categories < 2 {
            return Err(Error::InvalidConfig("a detector needs background plus at least one object category".into()));
        }
        let features = trunk.output_shape();
        for (head, out) in [(&class_head, categories), (&box_head, BOX_VALUES)] {
            if head.input_shape() != features.as_slice() {
                return Err(Error::shape("detector head input", &features, head.input_shape()));
            }
            if head.output_shape() != [out] {
                return Err(Error::shape("detector head output", [out], head.output_shape()));
            }
        }
        Ok(Self {
            trunk,
            class_head,
            box_head,
            categories,
        })
    }

    pub fn input_shape(&self) -> &[usize] {
        self.trunk.input_shape()
    }

    pub fn categories(&self) -> usize {
        self.categories
    }

    pub fn networks_mut(&mut self) -> [&mut Network; 3] {
        [&mut self.trunk, &mut self.class_head, &mut self.box_head]
    }

    pub fn networks(&self) -> [&Network; 3] {
        [&self.trunk, &self.class_head, &self.box_head]
    }

    /// Records trunk and both heads. Parameter handles are returned in the
    /// order trunk, category head, box head.
    pub fn outputs<T: Real>(&self, tape: &mut Tape<T>, input: Var, params: Params) -> Result<DetectorVars> {
        let (features, mut vars) = self.trunk.forward(tape, input, params)?;
        let (class_logits, cv) = self.class_head.forward(tape, features, params)?;
        let (raw_box, bv) = self.box_head.forward(tape, features, params)?;
        let bbox = tape.sigmoid(raw_box);
        vars.extend(cv);
        vars.extend(bv);
        Ok(DetectorVars {
            class_logits,
            bbox,
            params: vars,
        })
    }

    pub fn detect(&self, image: &Tensor) -> Result<Detection> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(image.clone());
        let out = self.outputs(&mut tape, x, Params::Frozen)?;
        let probabilities = softmax(tape.value(out.class_logits));
        let b = tape.value(out.bbox).data();
        Ok(Detection {
            category: probabilities.argmax(),
            probabilities,
            bbox: BoundingBox {
                cx: b[0],
                cy: b[1],
                w: b[2],
                h: b[3],
            },
        })
    }

    pub(super) fn to_parts(&self) -> (Architecture, Vec<(String, Tensor)>) {
        let mut entries = param_entries("trunk", &self.trunk);
        entries.extend(param_entries("class_head", &self.class_head));
        entries.extend(param_entries("box_head", &self.box_head));
        (
            Architecture::Detector {
                input_shape: self.input_shape().to_vec(),
                categories: self.categories,
                trunk: self.trunk.layers().to_vec(),
            },
            entries,
        )
    }

    pub(super) fn from_parts(arch: Architecture, mut entries: Vec<(String, Tensor)>) -> Result<Self> {
        let Architecture::Detector {
            input_shape,
            categories,
            trunk,
        } = arch
        else {
            return Err(Error::CorruptHeader("not a detector".into()));
        };
        let trunk = Network::from_parts(&input_shape, trunk, take_params("trunk", &mut entries)?)?;
        let features = trunk.output_shape();
        let class_head = Network::from_parts(
            &features,
            vec![LayerSpec::Dense { units: categories }],
            take_params("class_head", &mut entries)?,
        )?;
        let box_head = Network::from_parts(
            &features,
            vec![LayerSpec::Dense { units: BOX_VALUES }],
            take_params("box_head", &mut entries)?,
        )?;
        Self::from_networks(trunk, class_head, box_head, categories)
    }
}
