//! Byte-exact contents of the committed `fixtures/` directory. The
//! `make_fixtures` example writes them; a test checks they still reproduce.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenedet_core::image::{encode_ppm, RawImage};
use scenedet_core::model::sample::{random_inputs, tiny_model};
use scenedet_core::model::{Backbone, ConvLayer, DenseLayer, InputSpec, Layer, ModelMeta};
use scenedet_core::quantizer::calibrate;
use scenedet_core::{
    preprocess, quantize_model, save_model, ActivationKind, ConvSpec, Model, Padding, Shape, Tensor, CATEGORIES,
};

use crate::annotate::annotate;
use crate::toy;

fn tensor(dims: [usize; 4], f: impl Fn(usize) -> f32) -> Tensor {
    let shape = Shape::new(dims[0], dims[1], dims[2], dims[3]).expect("fixture dims");
    Tensor::from_f32(shape, (0..shape.len()).map(f).collect()).expect("fixture tensor")
}

/// Smallest useful classifier: 4x4 input, one strided conv, pool, softmax head.
pub fn minimal_model() -> Model {
    let conv = ConvSpec::new(3, 3, 2, Padding::Same, ActivationKind::Relu).expect("fixture spec");
    Model {
        meta: ModelMeta {
            name: "minimal".into(),
            revision: 1,
            backbone: Backbone::Generic,
            quantized: false,
            calibration_images: 0,
        },
        input: InputSpec::rgb(4, 4),
        input_quant: None,
        layers: vec![
            Layer::Conv(ConvLayer::float(
                conv,
                tensor([3, 3, 3, 2], |i| ((i * 7 % 11) as f32 - 5.0) / 8.0),
                vec![0.25, -0.125],
            )),
            Layer::GlobalAvgPool,
            Layer::Flatten,
            Layer::FullyConnected(DenseLayer::float(
                ActivationKind::Softmax,
                tensor([1, 1, 2, 30], |i| ((i * 5 % 13) as f32 - 6.0) / 4.0),
                (0..30).map(|i| (i % 3) as f32 / 2.0).collect(),
            )),
        ],
        labels: scenedet_core::labels::default_labels(),
    }
}

fn quantized(model: &Model, images: &[Tensor]) -> Model {
    quantize_model(model, &calibrate(model, images).expect("fixture calibration")).expect("fixture quantization")
}

/// Toy model with a zero logits layer: every class scores 1/30.
pub fn uniform_model() -> Model {
    let mut m = toy::toy_model();
    m.meta.name = "uniform".into();
    let last = m.layers.len() - 1;
    if let Layer::FullyConnected(d) = &m.layers[last] {
        let s = d.weights.shape();
        m.layers[last] = Layer::FullyConnected(DenseLayer::float(d.activation, Tensor::zeros(s), vec![0.0; s.c()]));
    }
    m
}

/// One image per category, named by slug.
pub fn scene_images() -> Vec<(String, RawImage)> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    CATEGORIES.iter().enumerate().map(|(c, cat)| (cat.slug.to_string(), toy::render(c, &mut rng))).collect()
}

/// The 60 preprocessed images `toy-int8` was calibrated on.
pub fn toy_calibration() -> Vec<Tensor> {
    let m = toy::toy_model();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    (0..CATEGORIES.len())
        .flat_map(|c| [toy::render(c, &mut rng), toy::render(c, &mut rng)])
        .map(|img| preprocess(&img, &m.input).expect("toy preprocess"))
        .collect()
}

fn png(img: &RawImage) -> Vec<u8> {
    let buf = image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.data().to_vec()).expect("rgb");
    let mut out = std::io::Cursor::new(Vec::new());
    buf.write_to(&mut out, image::ImageFormat::Png).expect("png encode");
    out.into_inner()
}

/// `(relative path, bytes)` for every fixture.
pub fn all() -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let save = |m: &Model| save_model(m).expect("fixture model validates");

    let minimal = minimal_model();
    let minimal_q = quantized(&minimal, &random_inputs(&minimal, 4, 1));
    for (name, m) in [("minimal", &minimal), ("minimal-int8", &minimal_q)] {
        let bytes = save(m);
        out.push((format!("models/{name}.csdm.hex"), annotate(&bytes).expect("fixture annotates").into_bytes()));
        out.push((format!("models/{name}.csdm"), bytes));
    }
    let tiny = tiny_model(7);
    let tiny_q = quantized(&tiny, &random_inputs(&tiny, 8, 2));
    let toy_m = toy::toy_model();
    let toy_q = quantized(&toy_m, &toy_calibration());
    for (name, m) in
        [("tiny", &tiny), ("tiny-int8", &tiny_q), ("toy", &toy_m), ("toy-int8", &toy_q), ("uniform", &uniform_model())]
    {
        out.push((format!("models/{name}.csdm"), save(m)));
    }

    let images = scene_images();
    for (slug, img) in &images {
        out.push((format!("images/{slug}.ppm"), encode_ppm(img)));
    }
    out.push(("images/08_beach.png".into(), png(&images[7].1)));
    let gray: Vec<u8> = images[10].1.data().chunks(3).map(|p| p[0]).collect();
    let mut pgm = format!("P5\n# snow, red channel\n{} {}\n255\n", toy::IMAGE_WIDTH, toy::IMAGE_HEIGHT).into_bytes();
    pgm.extend_from_slice(&gray);
    out.push(("images/11_snow_gray.pgm".into(), pgm));
    out
}
