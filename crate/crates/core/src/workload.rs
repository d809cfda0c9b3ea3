//! Layer shapes, models and the shape arithmetic everything else builds on.

use std::collections::HashSet;
use std::fmt;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerKind {
    #[serde(rename = "conv")]
    Conv,
    #[serde(rename = "dw")]
    DepthwiseConv,
    #[serde(rename = "pw")]
    Pointwise,
    #[serde(rename = "fc")]
    FullyConnected,
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            LayerKind::Conv => "conv",
            LayerKind::DepthwiseConv => "dw",
            LayerKind::Pointwise => "pw",
            LayerKind::FullyConnected => "fc",
        };
        f.write_str(s)
    }
}

/// One layer: `g` groups of an `m x c x r x s` filter bank over `n` inputs of `c x h x w`.
///
/// `h` and `w` are the padded input sizes; `e` and `f` follow from valid convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct LayerShape {
    pub g: u64,
    pub n: u64,
    pub m: u64,
    pub c: u64,
    pub h: u64,
    pub w: u64,
    pub r: u64,
    pub s: u64,
    pub e: u64,
    pub f: u64,
    pub u: u64,
    pub kind: LayerKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ShapeError {
    #[error("field `{field}` must be >= 1")]
    Zero { field: &'static str },
    #[error("field `{field}`: filter extent {filter} exceeds input extent {input}")]
    FilterTooLarge {
        field: &'static str,
        filter: u64,
        input: u64,
    },
    #[error("field `{field}` is {given}, valid convolution gives {expected}")]
    OutputMismatch {
        field: &'static str,
        given: u64,
        expected: u64,
    },
    #[error("field `{field}` must be {expected} for a {kind} layer, got {given}")]
    KindMismatch {
        field: &'static str,
        kind: LayerKind,
        expected: u64,
        given: u64,
    },
}

impl LayerShape {
    /// Builds a shape, deriving `e` and `f` from valid convolution.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        kind: LayerKind,
        g: u64,
        n: u64,
        m: u64,
        c: u64,
        h: u64,
        w: u64,
        r: u64,
        s: u64,
        u: u64,
    ) -> Result<Self, ShapeError> {
        Self::with_output(kind, [g, n, m, c, h, w, r, s, u], None, None)
    }

    fn with_output(
        kind: LayerKind,
        dims: [u64; 9],
        e: Option<u64>,
        f: Option<u64>,
    ) -> Result<Self, ShapeError> {
        let names = ["g", "n", "m", "c", "h", "w", "r", "s", "u"];
        for (v, name) in dims.iter().zip(names) {
            if *v == 0 {
                return Err(ShapeError::Zero { field: name });
            }
        }
        let [g, n, m, c, h, w, r, s, u] = dims;
        if r > h {
            return Err(ShapeError::FilterTooLarge {
                field: "r",
                filter: r,
                input: h,
            });
        }
        if s > w {
            return Err(ShapeError::FilterTooLarge {
                field: "s",
                filter: s,
                input: w,
            });
        }
        let e_exp = (h - r) / u + 1;
        let f_exp = (w - s) / u + 1;
        for (field, given, expected) in [("e", e, e_exp), ("f", f, f_exp)] {
            if let Some(given) = given {
                if given != expected {
                    return Err(ShapeError::OutputMismatch {
                        field,
                        given,
                        expected,
                    });
                }
            }
        }
        let shape = LayerShape {
            g,
            n,
            m,
            c,
            h,
            w,
            r,
            s,
            e: e_exp,
            f: f_exp,
            u,
            kind,
        };
        shape.check_kind()?;
        Ok(shape)
    }

    fn check_kind(&self) -> Result<(), ShapeError> {
        let kind = self.kind;
        let need = |field, expected, given| {
            if expected == given {
                Ok(())
            } else {
                Err(ShapeError::KindMismatch {
                    field,
                    kind,
                    expected,
                    given,
                })
            }
        };
        match kind {
            LayerKind::Conv => Ok(()),
            LayerKind::DepthwiseConv => {
                need("m", 1, self.m)?;
                need("c", 1, self.c)
            }
            LayerKind::Pointwise => {
                need("r", 1, self.r)?;
                need("s", 1, self.s)
            }
            LayerKind::FullyConnected => {
                need("r", self.h, self.r)?;
                need("s", self.w, self.s)?;
                need("e", 1, self.e)?;
                need("f", 1, self.f)
            }
        }
    }

    pub fn unit() -> Self {
        LayerShape::new(LayerKind::Conv, 1, 1, 1, 1, 1, 1, 1, 1, 1).unwrap()
    }

    /// A 1D convolution of `h` inputs with an `r`-tap filter.
    pub fn conv1d(h: u64, r: u64) -> Result<Self, ShapeError> {
        LayerShape::new(LayerKind::Conv, 1, 1, 1, 1, h, 1, r, 1, 1)
    }

    pub fn mac_count(&self) -> u64 {
        self.g * self.n * self.m * self.c * self.e * self.f * self.r * self.s
    }

    /// `(iacts, weights, psums)`.
    pub fn data_counts(&self) -> (u64, u64, u64) {
        (
            self.g * self.n * self.c * self.h * self.w,
            self.g * self.m * self.c * self.r * self.s,
            self.g * self.n * self.m * self.e * self.f,
        )
    }

    pub fn reuse_profile(&self) -> ReuseProfile {
        let macs = self.mac_count();
        let (i, w, p) = self.data_counts();
        ReuseProfile {
            iact_reuse: Ratio::new(macs, i),
            weight_reuse: Ratio::new(macs, w),
            psum_reuse: Ratio::new(macs, p),
        }
    }
}

pub fn mac_count(shape: &LayerShape) -> u64 {
    shape.mac_count()
}

pub fn data_counts(shape: &LayerShape) -> (u64, u64, u64) {
    shape.data_counts()
}

pub fn reuse_profile(shape: &LayerShape) -> ReuseProfile {
    shape.reuse_profile()
}

/// MACs per distinct value of each datatype.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReuseProfile {
    pub iact_reuse: Ratio<u64>,
    pub weight_reuse: Ratio<u64>,
    pub psum_reuse: Ratio<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Layer {
    pub label: String,
    pub shape: LayerShape,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DnnModel {
    pub name: String,
    pub layers: Vec<Layer>,
}

impl DnnModel {
    pub fn total_macs(&self) -> u64 {
        self.layers.iter().map(|l| l.shape.mac_count()).sum()
    }

    pub fn layer(&self, label: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.label == label)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("model descriptor parse error at line {line}, column {column}: {msg}")]
    Parse {
        line: usize,
        column: usize,
        msg: String,
    },
    #[error("layer `{label}`: {source}")]
    Shape {
        label: String,
        #[source]
        source: ShapeError,
    },
    #[error("duplicate layer label `{0}`")]
    DuplicateLabel(String),
    #[error("model `{0}` has no layers")]
    Empty(String),
    #[error("unknown bundled model `{0}`")]
    UnknownBundled(String),
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawModel {
    name: String,
    layers: Vec<RawLayer>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLayer {
    label: String,
    kind: LayerKind,
    g: u64,
    n: u64,
    m: u64,
    c: u64,
    h: u64,
    w: u64,
    r: u64,
    s: u64,
    u: u64,
    e: Option<u64>,
    f: Option<u64>,
}

pub fn load_model(text: &str) -> Result<DnnModel, LoadError> {
    let raw: RawModel = serde_json::from_str(text).map_err(|e| LoadError::Parse {
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    if raw.layers.is_empty() {
        return Err(LoadError::Empty(raw.name));
    }
    let mut seen = HashSet::new();
    let mut layers = Vec::with_capacity(raw.layers.len());
    for l in raw.layers {
        if !seen.insert(l.label.clone()) {
            return Err(LoadError::DuplicateLabel(l.label));
        }
        let shape = LayerShape::with_output(
            l.kind,
            [l.g, l.n, l.m, l.c, l.h, l.w, l.r, l.s, l.u],
            l.e,
            l.f,
        )
        .map_err(|source| LoadError::Shape {
            label: l.label.clone(),
            source,
        })?;
        layers.push(Layer {
            label: l.label,
            shape,
        });
    }
    Ok(DnnModel {
        name: raw.name,
        layers,
    })
}

pub const BUNDLED: [(&str, &str); 4] = [
    ("alexnet.json", include_str!("../models/alexnet.json")),
    (
        "mobilenet_0.5_128.json",
        include_str!("../models/mobilenet_0.5_128.json"),
    ),
    ("googlenet.json", include_str!("../models/googlenet.json")),
    (
        "mobilenet_1.0_224.json",
        include_str!("../models/mobilenet_1.0_224.json"),
    ),
];

/// Loads a bundled descriptor by file name, with or without the `.json` suffix.
pub fn bundled(name: &str) -> Result<DnnModel, LoadError> {
    let key = name.strip_suffix(".json").unwrap_or(name);
    BUNDLED
        .iter()
        .find(|(file, _)| file.strip_suffix(".json") == Some(key))
        .map(|(_, text)| load_model(text))
        .unwrap_or_else(|| Err(LoadError::UnknownBundled(name.to_string())))
}
