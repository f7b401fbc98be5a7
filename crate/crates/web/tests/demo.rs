use mhparse::instance::InstanceParsing;
use mhparse_web::DemoCore;

#[test]
fn generated_scene_renders_at_full_size() {
    let d = DemoCore::generate(3, 64, 4).unwrap();
    let n = 64 * 64 * 4;
    assert_eq!(d.image_rgba().len(), n);
    assert_eq!(d.ground_truth_rgba(true).len(), n);
    assert_eq!(d.recovered_rgba().len(), n);
    assert!(d.scene.person_count() >= 2 && d.scene.person_count() <= 4);
    assert!(DemoCore::generate(3, 16, 4).is_err(), "scenes below 32 pixels are rejected");
}

#[test]
fn recovery_from_ground_truth_affinity_finds_every_person() {
    // superpixels straddling a person boundary cost a few pixels at most
    for seed in 0..10 {
        let mut d = DemoCore::generate(seed, 64, 4).unwrap();
        let r = d.recover(16).unwrap();
        assert_eq!(r.persons, d.scene.person_count());
        assert_eq!(r.recovered, r.persons, "seed {seed}");
        assert!(r.ari > 0.99, "seed {seed}: {r:?}");
    }
    let mut d = DemoCore::generate(0, 64, 4).unwrap();
    assert_eq!(d.recover(16).unwrap().ari, 1.0);
}

#[test]
fn scores_fall_as_noise_grows() {
    let d = DemoCore::generate(5, 64, 4).unwrap();
    let clean = d.score(&d.corrupted(0.0, 0).unwrap()).unwrap();
    assert_eq!(clean.ap_vol, 1.0);
    assert_eq!(clean.pcp_50, 1.0);
    assert_eq!(d.corrupted(0.0, 0).unwrap(), InstanceParsing::from_scene(&d.scene));
    let noisy = d.score(&d.corrupted(0.8, 0).unwrap()).unwrap();
    assert!(noisy.ap_vol < clean.ap_vol);
    assert_eq!(noisy.ap.len(), 9);
}
