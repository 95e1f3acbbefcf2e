//! Windowing, resampling and channel assembly of one phantom.
//!
//! `cargo run --release --example preprocess`

use planret::volumes::{
    assemble_channels, generate_phantom, preprocess, window_normalize_value, ChannelVariant, ClassCriteria, PhantomSpec,
    PrepConfig,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for hu in [-1000.0, -200.0, 0.0, 200.0, 1500.0] {
        println!("{hu:>7} HU -> {:.3}", window_normalize_value(hu, 400.0, 0.0));
    }

    let criteria = ClassCriteria::from_class_id(13).unwrap();
    let (case, meta) = generate_phantom(&PhantomSpec::new("demo", criteria, 7))?;
    let prep = PrepConfig::default();
    let small = preprocess(&case, prep.dims)?;
    println!(
        "{} class {}: {:?} @ {:.2} mm -> {:?} @ {:.2} mm",
        meta.case_id,
        meta.class_id,
        case.dims(),
        case.spacing[0],
        small.dims(),
        small.spacing[0]
    );
    for variant in [ChannelVariant::Anatomy, ChannelVariant::Dose] {
        let x = assemble_channels(&small, variant, meta.prescription, &prep)?;
        let n = x.len() / 2;
        let (c0, c1) = x.data().split_at(n);
        let range = |v: &[f32]| v.iter().fold((f32::MAX, f32::MIN), |(lo, hi), &x| (lo.min(x), hi.max(x)));
        println!("{variant:?}: shape {:?}, channel 0 range {:?}, channel 1 range {:?}", x.shape(), range(c0), range(c1));
    }

    let mid = small.dims()[0] / 2;
    for row in small.mask.axial_slice(mid) {
        println!("{}", row.iter().map(|l| [' ', '#', '+', 'o', '.'][*l as usize]).collect::<String>());
    }
    Ok(())
}
