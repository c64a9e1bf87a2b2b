import pytest
import torch

from voidkit.evaluation import metric_psnr
from voidkit.losses import loss_attn
from voidkit.victims import (BundleManifest, EncoderSpec, ManifestError, VictimError,
                             build_surrogate_bundle, synthetic_face, synthetic_face_u8)
from voidkit.victims.surrogate import canonical_box, top_box


def test_synthetic_face_deterministic():
    assert (synthetic_face_u8(3) == synthetic_face_u8(3)).all()
    assert not (synthetic_face_u8(3) == synthetic_face_u8(4)).all()
    x = synthetic_face(3)
    assert x.shape == (64, 64, 3) and x.dtype == torch.float64


@pytest.mark.parametrize("seed", range(20))
def test_detector_responds_to_face(bundle, seed):
    det = bundle.detect(synthetic_face(seed))
    assert float(det.face_probs.max()) > 0.5


def test_detector_determinism_and_zero_image(bundle, face):
    a, b = bundle.detect(face), bundle.detect(face)
    assert torch.equal(a.face_probs, b.face_probs) and torch.equal(a.reg_offsets, b.reg_offsets)
    z = bundle.detect(torch.zeros(64, 64, 3, dtype=torch.float64))
    assert torch.isfinite(z.face_probs).all() and torch.isfinite(z.reg_offsets).all()
    assert z.anchor_count == 64


def test_top_box_near_canonical(bundle, face):
    box = top_box(bundle.detect(face))
    assert (box - canonical_box()).abs().max() < 8


def test_embed(bundle, face):
    u = bundle.embed(face, "arc_a")
    assert torch.equal(u.data, bundle.embed(face, "arc_a").data)
    assert u.dim == 32
    assert abs(float(u.data.norm()) - 1) < 1e-12
    with pytest.raises(KeyError):
        bundle.embed(face, "nope")


def test_eval_encoder_held_out(bundle):
    assert bundle.eval_encoder not in bundle.attack_encoders
    man = BundleManifest(encoders=(EncoderSpec("a", role="attack"), EncoderSpec("e", role="eval")),
                         condition_encoder="a")
    b = build_surrogate_bundle(man)
    assert b.attack_encoders == ("a",) and b.eval_encoder == "e"


def test_taps(bundle, face):
    z = bundle.encode_latent(face)
    attn, feat = bundle.tap_generation(face, z, 3)
    attn2, feat2 = bundle.tap_generation(face, z, 3)
    assert len(attn) == 2 and len(feat) == 2
    for a, b in zip(attn, attn2):
        assert torch.equal(a.K, b.K) and torch.equal(a.V, b.V)
    for a, b in zip(feat, feat2):
        assert torch.equal(a.fmap, b.fmap)
    assert float(loss_attn(attn, attn2)) == 0.0
    for f in feat:
        assert tuple(f.fmap.shape[:2]) == bundle.backbone.feature_resolution(f.layer_id)


def test_tap_timestep_range(bundle, face):
    z = bundle.encode_latent(face)
    with pytest.raises(ValueError):
        bundle.tap_generation(face, z, bundle.backbone.timesteps)
    with pytest.raises(ValueError):
        bundle.tap_generation(face, z, -1)


def test_codec(bundle):
    for s in range(10):
        x = synthetic_face(s)
        assert metric_psnr(x, bundle.decode_latent(bundle.encode_latent(x))) >= 25.0
    out = bundle.decode_latent(torch.zeros(bundle.latent_shape, dtype=torch.float64))
    assert torch.isfinite(out).all() and out.min() >= 0 and out.max() <= 1


def test_codec_rejects_bad_latent(bundle):
    z = torch.zeros(bundle.latent_shape, dtype=torch.float64)
    z[0, 0, 0] = float("nan")
    with pytest.raises(VictimError):
        bundle.decode_latent(z)
    with pytest.raises(Exception):
        bundle.decode_latent(torch.zeros(4, 4, 4, dtype=torch.float64))


def test_perceptual(bundle, face, target):
    d, dmap = bundle.perceptual_map(face, face)
    assert float(d) == 0.0 and (dmap == 0).all()
    d2, dmap2 = bundle.perceptual_map(face, target)
    assert float(d2) > 0 and dmap2.shape == (64, 64)
    with pytest.raises(ValueError):
        bundle.perceptual_map(face, face[:32])


def test_parser(bundle):
    for s in range(10):
        area = float(bundle.parse_face(synthetic_face(s)).data.mean())
        assert 0.02 <= area <= 0.40
    blank = bundle.parse_face(torch.zeros(64, 64, 3, dtype=torch.float64))
    assert blank.kind == "semantic"


def test_swap(bundle, face, target):
    out = bundle.swap(face, target)
    assert out.shape == face.shape and out.min() >= 0 and out.max() <= 1
    assert torch.equal(out, bundle.swap(face, target))
    blank = torch.full((64, 64, 3), 0.5, dtype=torch.float64)
    assert bundle.swap(blank, target) is None


def test_bundle_seeds_differ():
    a, b = build_surrogate_bundle(BundleManifest(seed=1)), build_surrogate_bundle(BundleManifest(seed=2))
    x = synthetic_face(0)
    assert not torch.equal(a.embed(x, "arc_a").data, b.embed(x, "arc_a").data)


def test_manifest_roundtrip(tmp_path):
    m = BundleManifest(seed=7, timesteps=12)
    m.save(tmp_path / "m.yaml")
    assert BundleManifest.load(tmp_path / "m.yaml") == m


@pytest.mark.parametrize("data,field", [
    ({"image_size": 60}, "image_size"),
    ({"seed": -1}, "seed"),
    ({"timesteps": 0}, "timesteps"),
    ({"colour": 1}, "colour"),
    ({"condition_encoder": "zz"}, "condition_encoder"),
])
def test_manifest_errors_name_field(data, field):
    with pytest.raises(ManifestError) as err:
        BundleManifest.from_dict(data)
    assert err.value.field == field
    assert field in str(err.value)
