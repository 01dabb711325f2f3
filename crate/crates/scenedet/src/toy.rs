//! A synthetic 30-class "palette" scene set and a classifier for it whose
//! weights are written down rather than trained.
//!
//! Each class is a base colour. Images are that colour with a random tinted
//! rectangle and per-pixel noise. The model splits every channel into its
//! positive and negative part (a conv with ±1 centre taps and relu),
//! smooths with a 3x3 box depthwise conv, pools, and scores classes by
//! negative squared distance to each class's pooled feature vector.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use scenedet_core::image::{encode_ppm, RawImage};
use scenedet_core::model::{forward_prefix, Backbone, ConvLayer, DenseLayer, InputSpec, Layer, ModelMeta};
use scenedet_core::{preprocess, validate, ActivationKind, ConvSpec, Model, Padding, Shape, Tensor, CATEGORIES};

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const INPUT_SIZE: usize = 32;
/// Stored images are 3:2 landscape, so preprocessing always resizes.
pub const IMAGE_WIDTH: usize = 48;
pub const IMAGE_HEIGHT: usize = 32;
const FEATURES: usize = 6;
const TEMPERATURE: f32 = 20.0;
const LEVELS: [u8; 4] = [30, 100, 170, 240];

/// Base colour of class `c`: the first 30 points of a 4x4x2 RGB grid.
pub fn palette(c: usize) -> [u8; 3] {
    assert!(c < CATEGORIES.len());
    [LEVELS[c / 8], LEVELS[(c / 2) % 4], if c.is_multiple_of(2) { 60 } else { 200 }]
}

/// One random image of class `c`.
pub fn render(c: usize, rng: &mut ChaCha8Rng) -> RawImage {
    let base = palette(c);
    let tint: [i32; 3] = [rng.gen_range(-24..=24), rng.gen_range(-24..=24), rng.gen_range(-24..=24)];
    let x0 = rng.gen_range(0..IMAGE_WIDTH / 2);
    let y0 = rng.gen_range(0..IMAGE_HEIGHT / 2);
    let (x1, y1) = (x0 + rng.gen_range(4..IMAGE_WIDTH / 2), y0 + rng.gen_range(4..IMAGE_HEIGHT / 2));
    let mut data = Vec::with_capacity(IMAGE_WIDTH * IMAGE_HEIGHT * 3);
    for y in 0..IMAGE_HEIGHT {
        for x in 0..IMAGE_WIDTH {
            let inside = (x0..x1).contains(&x) && (y0..y1).contains(&y);
            for ch in 0..3 {
                let mut v = base[ch] as i32 + rng.gen_range(-16..=16);
                if inside {
                    v += tint[ch];
                }
                data.push(v.clamp(0, 255) as u8);
            }
        }
    }
    RawImage::new(IMAGE_WIDTH, IMAGE_HEIGHT, data).expect("toy image dims")
}

fn tensor(dims: [usize; 4], data: Vec<f32>) -> Tensor {
    Tensor::from_f32(Shape::new(dims[0], dims[1], dims[2], dims[3]).expect("toy dims"), data).expect("toy tensor")
}

fn backbone() -> Vec<Layer> {
    // Centre tap only: out[c] = x[c], out[c + 3] = -x[c].
    let mut split = vec![0.0f32; 9 * 3 * FEATURES];
    for c in 0..3 {
        split[(4 * 3 + c) * FEATURES + c] = 1.0;
        split[(4 * 3 + c) * FEATURES + c + 3] = -1.0;
    }
    let conv = ConvSpec::new(3, 3, 1, Padding::Same, ActivationKind::Relu).expect("toy spec");
    let boxed = ConvSpec::new(3, 3, 1, Padding::Same, ActivationKind::None).expect("toy spec");
    vec![
        Layer::Conv(ConvLayer::float(conv, tensor([3, 3, 3, FEATURES], split), vec![0.0; FEATURES])),
        Layer::DepthwiseConv(ConvLayer::float(
            boxed,
            tensor([3, 3, FEATURES, 1], vec![1.0 / 9.0; 9 * FEATURES]),
            vec![0.0; FEATURES],
        )),
        Layer::GlobalAvgPool,
        Layer::Flatten,
    ]
}

fn model_with(layers: Vec<Layer>) -> Model {
    Model {
        meta: ModelMeta {
            name: "toy-palette".into(),
            revision: 1,
            backbone: Backbone::Generic,
            quantized: false,
            calibration_images: 0,
        },
        input: InputSpec::rgb(INPUT_SIZE, INPUT_SIZE),
        input_quant: None,
        layers,
        labels: scenedet_core::labels::default_labels(),
    }
}

/// Pooled features of a flat image of each class colour.
fn centroids(features: &Model) -> Vec<Vec<f32>> {
    (0..CATEGORIES.len())
        .map(|c| {
            let img = RawImage::filled(INPUT_SIZE, INPUT_SIZE, palette(c)).expect("toy dims");
            let x = preprocess(&img, &features.input).expect("toy preprocess");
            let out = forward_prefix(features, &x, features.layers.len()).expect("toy features");
            out.as_f32().expect("float features").to_vec()
        })
        .collect()
}

/// `z_c = T · (2 μ_c · f − |μ_c|²)`, which ranks classes like `−T |f − μ_c|²`.
pub fn toy_model() -> Model {
    let features = model_with(backbone());
    let mu = centroids(&features);
    let classes = mu.len();
    let mut w = vec![0.0f32; FEATURES * classes];
    let mut b = vec![0.0f32; classes];
    for (c, m) in mu.iter().enumerate() {
        for i in 0..FEATURES {
            w[i * classes + c] = 2.0 * TEMPERATURE * m[i];
        }
        b[c] = -TEMPERATURE * m.iter().map(|v| v * v).sum::<f32>();
    }
    let mut layers = backbone();
    layers.push(Layer::FullyConnected(DenseLayer::float(
        ActivationKind::Softmax,
        tensor([1, 1, FEATURES, classes], w),
        b,
    )));
    let model = model_with(layers);
    debug_assert_eq!(validate(&model), Ok(()));
    model
}

/// Writes `root/<slug>/<NNN>.ppm`, `per_class` images per category.
pub fn write_split(root: &Path, per_class: usize, seed: u64) -> Result<Vec<(PathBuf, usize)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for (c, cat) in CATEGORIES.iter().enumerate() {
        let dir = root.join(cat.slug);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_class {
            let path = dir.join(format!("{i:03}.ppm"));
            write_atomic(&path, &encode_ppm(&render(c, &mut rng)))?;
            out.push((path, c));
        }
    }
    Ok(out)
}

/// `calib/` and `test/` splits with different seeds, plus `toy.csdm`.
pub fn write_toy_set(root: &Path, per_class: usize, seed: u64) -> Result<()> {
    write_split(&root.join("calib"), per_class, seed)?;
    write_split(&root.join("test"), per_class, seed.wrapping_add(1))?;
    crate::io::write_model(&root.join("toy.csdm"), &toy_model())
}

#[cfg(test)]
mod tests {
    use super::*;
    use scenedet_core::model::forward;

    #[test]
    fn palettes_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for c in 0..30 {
            assert!(seen.insert(palette(c)));
        }
    }

    #[test]
    fn flat_class_colour_is_recognized() {
        let m = toy_model();
        assert_eq!(validate(&m), Ok(()));
        for c in 0..30 {
            let img = RawImage::filled(IMAGE_WIDTH, IMAGE_HEIGHT, palette(c)).unwrap();
            let p = forward(&m, &preprocess(&img, &m.input).unwrap()).unwrap();
            let top = scenedet_core::model::rank(&p)[0];
            assert_eq!(top, c);
            assert!(p[c] > 0.5);
        }
    }

    #[test]
    fn rendering_is_seeded() {
        let a = render(3, &mut ChaCha8Rng::seed_from_u64(1));
        let b = render(3, &mut ChaCha8Rng::seed_from_u64(1));
        assert_eq!(a, b);
        assert_eq!((a.width(), a.height()), (IMAGE_WIDTH, IMAGE_HEIGHT));
    }
}
