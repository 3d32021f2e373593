use std::path::Path;

use inst4dgs::checkpoint::{decode_trajectories, encode_trajectories};
use inst4dgs::netpbm::{decode_pgm, decode_ppm, encode_pgm, encode_ppm};
use inst4dgs_core::geometry::{Quat, Se3, Vec3};
use inst4dgs_core::image::{Image, LabelMap};
use proptest::prelude::*;

fn dims() -> impl Strategy<Value = (usize, usize)> {
    (1usize..12, 1usize..12)
}

proptest! {
    #[test]
    fn ppm_round_trips_bytes(((w, h), seed) in (dims(), any::<u64>())) {
        let bytes: Vec<u8> = (0..w * h * 3).map(|i| (seed.rotate_left(i as u32 % 64) as u8) ^ i as u8).collect();
        let img = Image::from_bytes(w, h, &bytes).unwrap();
        let back = decode_ppm(&encode_ppm(&img), Path::new("x.ppm")).unwrap();
        prop_assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn pgm_round_trips_labels(labels in dims().prop_flat_map(|(w, h)| {
        (Just(w), Just(h), prop::collection::vec(any::<u8>(), w * h))
    })) {
        let (w, h, l) = labels;
        let map = LabelMap::from_labels(w, h, l).unwrap();
        prop_assert_eq!(decode_pgm(&encode_pgm(&map), Path::new("x.pgm")).unwrap(), map);
    }

    #[test]
    fn double_trajectories_round_trip_exactly(
        poses in prop::collection::vec((prop::array::uniform4(-1.0f64..1.0), prop::array::uniform3(-5.0f64..5.0)), 1..6),
        count in 1usize..4,
    ) {
        let tr: Vec<Se3> = poses
            .iter()
            .map(|(q, t)| Se3 { rotation: Quat::new(q[0], q[1], q[2], q[3]), translation: Vec3::from_array(*t) })
            .collect();
        let all: Vec<&[Se3]> = (0..count).map(|_| tr.as_slice()).collect();
        let (header, bytes) = encode_trajectories(&all, true).unwrap();
        let back = decode_trajectories(&header, &bytes, Path::new("x.bin")).unwrap();
        prop_assert_eq!(back, vec![tr.clone(); count]);
        let (header, bytes) = encode_trajectories(&all, false).unwrap();
        prop_assert!(decode_trajectories(&header, &bytes[1..], Path::new("x.bin")).is_err());
    }
}
