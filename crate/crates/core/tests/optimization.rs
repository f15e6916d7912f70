use nalgebra::Vector3;

use ringmap::geometry::{PinholeCamera, RigidPose};
use ringmap::image::Image;
use ringmap::mapper::{DensityConfig, LearningRates, MapTrainer, UncertaintyConfig};
use ringmap::render::{loss_reconstruction, render, Gaussian3D, ReconWeights, RenderSettings, SplatMap};

fn l1(map: &SplatMap, target: &Image, cam: &PinholeCamera, pose: &RigidPose) -> f64 {
    let (out, _) = render(map, cam, pose, &RenderSettings::default());
    let ones = Image::filled(target.width, target.height, 1, 1.0);
    loss_reconstruction(target, &out, &ones, ReconWeights::default()).unwrap().l1
}

#[test]
fn two_gaussian_fit_reduces_l1_tenfold() {
    let cam = PinholeCamera::new(32.0, 32.0, 16.0, 12.0, 32, 24).unwrap();
    let pose = RigidPose::identity();
    let truth = SplatMap::from_gaussians(vec![
        Gaussian3D::new(Vector3::new(-0.4, 0.1, 3.0), 0.25, 0.9, Vector3::new(0.9, 0.3, 0.2)),
        Gaussian3D::new(Vector3::new(0.5, -0.2, 3.0), 0.3, 0.8, Vector3::new(0.2, 0.6, 0.9)),
    ]);
    let target = render(&truth, &cam, &pose, &RenderSettings::default()).0.color;

    let mut map = SplatMap::from_gaussians(vec![
        Gaussian3D::new(Vector3::new(-0.25, 0.2, 3.0), 0.32, 0.6, Vector3::new(0.6, 0.5, 0.4)),
        Gaussian3D::new(Vector3::new(0.35, -0.05, 3.0), 0.22, 0.6, Vector3::new(0.4, 0.4, 0.6)),
    ]);
    let density = DensityConfig { every: 0, ..DensityConfig::default() };
    let uncertainty = UncertaintyConfig { enabled: false, ..UncertaintyConfig::default() };
    let mut trainer = MapTrainer::new(LearningRates::default(), density, ReconWeights::default(), uncertainty, 0);

    let before = l1(&map, &target, &cam, &pose);
    for _ in 0..500 {
        trainer.step(&mut map, 0, &target, &pose, &cam).unwrap();
    }
    let after = l1(&map, &target, &cam, &pose);
    assert!(after * 10.0 <= before, "L1 {before} -> {after}");
}
