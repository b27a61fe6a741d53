use super::*;
use crate::data::tests::toy_trajectory;
use crate::nn::EncoderConfig;

fn solid(size: usize, v: u8) -> Image {
    Image {
        size,
        data: vec![v; size * size * 3],
    }
}

#[test]
fn pose_distance_examples() {
    let z = [0.0; 6];
    let one = [1.0; 6];
    assert_eq!(pose_distance(&z, &z, &one).unwrap(), 0.0);
    assert_eq!(pose_distance(&[3.0, 4.0, 0.0, 0.0, 0.0, 0.0], &z, &one).unwrap(), 5.0);
    let s = [2.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    assert_eq!(pose_distance(&[2.0, 0.0, 0.0, 0.0, 0.0, 0.0], &z, &s).unwrap(), 1.0);
    assert!(pose_distance(&z[..5], &z[..5], &one[..5]).is_err());
    assert!(pose_distance(&z, &z, &[0.0; 6]).is_err());
}

#[test]
fn sigma_is_floored() {
    let poses = [[0.0, 1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 3.0, 0.0, 0.0, 0.0, 0.0]];
    let s = pose_sigma(&poses, 1e-8);
    assert_eq!(s[0], 1e-8);
    assert_eq!(s[1], 1.0);
}

#[test]
fn feature_distance_examples() {
    let h = [0.3, -0.4, 1.2];
    let (c, s) = feature_distances(&h, &h).unwrap();
    assert!(c.unwrap().abs() < 1e-12);
    assert_eq!(s, 0.0);
    let (c, s) = feature_distances(&[1.0, 0.0], &[0.0, 1.0]).unwrap();
    assert_eq!((c, s), (Some(1.0), 0.0));
    let double: Vec<f64> = h.iter().map(|v| 2.0 * v).collect();
    let (c, s) = feature_distances(&h, &double).unwrap();
    assert!(c.unwrap().abs() < 1e-12);
    assert!((s - (0.09f64 + 0.16 + 1.44).sqrt()).abs() < 1e-12);
    assert_eq!(feature_distances(&[0.0, 0.0], &[1.0, 0.0]).unwrap(), (None, 1.0));
    let (c, _) = feature_distances(&[1.0, 0.0], &[-1.0, 0.0]).unwrap();
    assert_eq!(c, Some(2.0));
}

#[test]
fn pixel_control_examples() {
    let (black, white) = (solid(32, 0), solid(32, 255));
    assert_eq!(pixel_control(&black, &black, 16).unwrap(), 0.0);
    assert!((pixel_control(&black, &white, 16).unwrap() - 1.0).abs() < 1e-12);
    let mut a = solid(32, 0);
    a.data[..300].iter_mut().for_each(|v| *v = 200);
    assert_eq!(pixel_control(&a, &white, 16).unwrap(), pixel_control(&white, &a, 16).unwrap());
    assert!(pixel_control(&a, &solid(16, 0), 8).is_err());
    assert!(pixel_control(&a, &white, 0).is_err());
}

#[test]
fn fractional_area_downsampling_preserves_the_mean() {
    let mut img = solid(5, 0);
    for (k, v) in img.data.iter_mut().enumerate() {
        *v = (k * 37 % 256) as u8;
    }
    let full = thumbnail(&img, 5).unwrap();
    let small = thumbnail(&img, 2).unwrap();
    assert!((full.mean().unwrap() - small.mean().unwrap()).abs() < 1e-12);
}

#[test]
fn pairs_respect_the_gap_and_count() {
    let t = toy_trajectory(50);
    let cfg = AlignConfig {
        gaps: vec![1],
        pairs_per_gap: 10,
        ..AlignConfig::default()
    };
    let (pairs, omitted) = sample_pairs(&[&t], &cfg).unwrap();
    assert_eq!(pairs.len(), 10);
    assert!(omitted.is_empty());
    assert!(pairs.iter().all(|p| p.j - p.i == 1 && p.j < 50));
    assert_eq!(sample_pairs(&[&t], &cfg).unwrap().0, pairs);

    let cfg = AlignConfig {
        gaps: vec![2, 60, 4],
        pairs_per_gap: 7,
        ..AlignConfig::default()
    };
    let (pairs, omitted) = sample_pairs(&[&t, &toy_trajectory(3)], &cfg).unwrap();
    assert_eq!(pairs.len(), 14);
    assert_eq!(omitted, vec![60]);
    assert!(pairs.iter().all(|p| p.traj == 0 || p.j < 3));
    assert!(sample_pairs(&[&t], &AlignConfig { gaps: vec![0], ..cfg }).is_err());
}

#[test]
fn encoder_copy_gives_identical_rows() {
    let data = crate::train::tests::small_dataset(6);
    let trajs: Vec<&Trajectory> = data.trajectories.iter().collect();
    let enc = Encoder::<f32>::new(EncoderConfig {
        image_size: 16,
        patch: 4,
        channels: 8,
        depth: 1,
        seed: 5,
    })
    .unwrap();
    let copy = enc.clone();
    let cfg = AlignConfig {
        gaps: vec![1, 4],
        pairs_per_gap: 20,
        thumb: 8,
        ..AlignConfig::default()
    };
    let r = alignment_report(&trajs, &[("a".into(), &enc), ("b".into(), &copy)], &cfg).unwrap();
    let (a, b) = (&r.encoders[0], &r.encoders[1]);
    assert_eq!(a.pairs, b.pairs);
    assert_eq!(a.summary[0].rho_partial, b.summary[0].rho_partial);
    assert!(a.summary[0].rho_partial.is_some());
    assert_eq!(a.pairs.len(), 40);

    let mut buf = Vec::new();
    write_summary(&mut buf, &r.summary()).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("encoder,metric,rho_partial,n_pairs,n_dropped\n"));
    assert_eq!(read_summary(buf.as_slice()).unwrap(), r.summary());
    let mut buf = Vec::new();
    write_pairs(&mut buf, &a.pairs).unwrap();
    assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 41);
}
