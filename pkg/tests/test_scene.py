import numpy as np
import pytest

from beamsel.channel import RadioParams
from beamsel.codebook import CodebookConfig, generate_codebook
from beamsel.scene import (
    PRESETS,
    CorruptionProfile,
    Detection,
    FrameRejected,
    SceneError,
    WorldConfig,
    binarize,
    column_of,
    corrupt,
    generate_frame,
    load_frames,
    read_pgm,
    save_frames,
    write_pgm,
)

WORLD = WorldConfig()
CB = generate_codebook(
    CodebookConfig.half_wavelength(16, 32, 299792458.0 / 60e9, azimuth_range=(-0.35, 0.35))
)
RADIO = RadioParams(1.0, 1.0)


def make_frame(seed, **kwargs):
    return generate_frame(WORLD, seed, CB, RADIO, frame_id=seed, **kwargs)


def det_of(frame, vehicle_id):
    return next(d for d in frame.detections if d.vehicle_id == vehicle_id)


def test_target_at_fov_center_bbox_centered():
    lo, hi = WORLD.camera_fov
    frame = make_frame(0, target_azimuth=(lo + hi) / 2.0)
    det = det_of(frame, frame.target.id)
    x_min, _, x_max, _ = det.bbox
    center = (x_min + x_max) / 2.0
    n = WORLD.image_size[1]
    half_extent_px = (x_max - x_min) / 2.0
    assert abs(center - n / 2.0) <= 1.5  # centered up to pixel quantization
    assert x_min == pytest.approx(n / 2.0 - half_extent_px, abs=1.0)


def test_single_vehicle_full_mask_equals_its_mask():
    # seeds are cheap: scan for a frame with exactly one vehicle
    frame = next(make_frame(s) for s in range(100) if len(make_frame(s).vehicles) == 1)
    det = frame.detections[0]
    expect = np.zeros(WORLD.image_size, dtype=np.uint8)
    x_min, y_min, x_max, y_max = det.bbox
    expect[y_min:y_max, x_min:x_max] = det.mask
    np.testing.assert_array_equal(frame.full_mask, expect)


def test_seeded_regeneration_bit_identical():
    a, b = make_frame(42), make_frame(42)
    np.testing.assert_array_equal(a.full_mask, b.full_mask)
    np.testing.assert_array_equal(a.gps_history, b.gps_history)
    np.testing.assert_array_equal(a.beam_history, b.beam_history)
    assert a.ground_truth_beam == b.ground_truth_beam
    assert a.vehicles == b.vehicles
    assert [d.bbox for d in a.detections] == [d.bbox for d in b.detections]


def test_exactly_one_target_and_detection_membership():
    for seed in range(30):
        frame = make_frame(seed)
        assert sum(v.is_target for v in frame.vehicles) == 1
        ids = {v.id for v in frame.vehicles}
        assert all(d.vehicle_id in ids for d in frame.detections)
        assert len(frame.detections) <= WORLD.max_vehicles


def test_masks_binary_everywhere():
    for seed in range(10):
        frame = make_frame(seed)
        assert set(np.unique(frame.full_mask)).issubset({0, 1})
        for det in frame.detections:
            assert set(np.unique(det.mask)).issubset({0, 1})


def test_target_outside_fov_rejected():
    with pytest.raises(FrameRejected):
        make_frame(0, target_azimuth=WORLD.camera_fov[1] + 0.05)


def test_labels_deterministic_function_of_azimuth():
    az = 0.1234
    a = make_frame(1, target_azimuth=az)
    b = make_frame(999, target_azimuth=az)
    assert a.ground_truth_beam == b.ground_truth_beam


def test_history_shapes_and_prev_beam_consistency():
    frame = make_frame(7)
    assert frame.gps_history.shape == (WORLD.history_len, 2)
    assert frame.beam_history.shape == (WORLD.history_len,)
    # previous beam of the final step is near the label (smooth motion)
    assert abs(int(frame.beam_history[-1]) - frame.ground_truth_beam) <= 3


def box_detection(x_min, y_min, x_max, y_max, vid=0):
    return Detection(vehicle_id=vid, bbox=(x_min, y_min, x_max, y_max),
                     mask=np.ones((y_max - y_min, x_max - x_min), dtype=np.uint8))


def test_binarize_empty():
    mask = binarize((), (20, 30))
    assert mask.shape == (20, 30)
    assert mask.sum() == 0


def test_binarize_disjoint_boxes_area_adds():
    dets = (box_detection(0, 0, 5, 4), box_detection(10, 10, 16, 13, vid=1))
    mask = binarize(dets, (20, 30))
    assert int(mask.sum()) == 5 * 4 + 6 * 3


def test_binarize_overlapping_boxes_inclusion_exclusion():
    dets = (box_detection(0, 0, 10, 10), box_detection(5, 5, 15, 15, vid=1))
    mask = binarize(dets, (20, 30))
    # independent pixel-count oracle
    grid = np.zeros((20, 30), dtype=bool)
    for x_min, y_min, x_max, y_max in [(0, 0, 10, 10), (5, 5, 15, 15)]:
        for yy in range(y_min, y_max):
            for xx in range(x_min, x_max):
                grid[yy, xx] = True
    assert int(mask.sum()) == int(grid.sum()) == 100 + 100 - 25


def test_corrupt_drop_all():
    frame = make_frame(3)
    blind = corrupt(frame, PRESETS["blind"], 11, WORLD)
    assert blind.detections == ()
    assert blind.full_mask.sum() == 0
    assert blind.ground_truth_beam == frame.ground_truth_beam


def test_corrupt_identity_profile_bit_exact():
    frame = make_frame(4)
    out = corrupt(frame, PRESETS["clear"], 5, WORLD)
    np.testing.assert_array_equal(out.full_mask, frame.full_mask)
    np.testing.assert_array_equal(out.gps_history, frame.gps_history)
    assert out.vehicles == frame.vehicles
    assert [d.bbox for d in out.detections] == [d.bbox for d in frame.detections]


def test_corrupt_flip_fraction_binomial():
    det = box_detection(0, 0, 100, 100)
    frame_mask = np.ones((100, 100), dtype=np.uint8)
    profile = CorruptionProfile("half", mask_flip_prob=0.5)
    flips = []
    # frame with one detection occupying the whole image
    from beamsel.scene import Frame, Vehicle

    frame = Frame(
        frame_id=0, timestamp=0.0,
        vehicles=(Vehicle(0, (0.0, 60.0), 1.4, True, (126.95, 37.4006)),),
        detections=(det,), full_mask=frame_mask, ground_truth_beam=0,
        corruption="clear",
        gps_history=np.zeros((8, 2)), beam_history=np.zeros(8, dtype=np.int64),
    )
    out = corrupt(frame, profile, 123, WORLD)
    flipped = 1.0 - out.detections[0].mask.mean()
    assert abs(flipped - 0.5) < 0.02


def test_corrupt_never_alters_label_or_history_beams():
    frame = make_frame(9)
    for name in PRESETS:
        out = corrupt(frame, PRESETS[name], 77, WORLD)
        assert out.ground_truth_beam == frame.ground_truth_beam
        np.testing.assert_array_equal(out.beam_history, frame.beam_history)


def test_corrupt_deterministic():
    frame = make_frame(10)
    a = corrupt(frame, PRESETS["fog"], 55, WORLD)
    b = corrupt(frame, PRESETS["fog"], 55, WORLD)
    np.testing.assert_array_equal(a.full_mask, b.full_mask)
    np.testing.assert_array_equal(a.gps_history, b.gps_history)
    assert [d.bbox for d in a.detections] == [d.bbox for d in b.detections]


def test_corrupt_jitter_keeps_boxes_in_bounds():
    frame = make_frame(12)
    out = corrupt(frame, PRESETS["rain_heavy"], 6, WORLD)
    rows, cols = WORLD.image_size
    for det in out.detections:
        x_min, y_min, x_max, y_max = det.bbox
        assert 0 <= x_min < x_max <= cols
        assert 0 <= y_min < y_max <= rows
        assert det.mask.shape == (y_max - y_min, x_max - x_min)


def test_invalid_profile_rejected():
    with pytest.raises(SceneError):
        CorruptionProfile("bad", detection_drop_prob=1.5)
    with pytest.raises(SceneError):
        CorruptionProfile("bad", bbox_jitter_px=-1)


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    mask = (rng.random((17, 23)) < 0.4).astype(np.uint8)
    path = str(tmp_path / "m.pgm")
    write_pgm(path, mask)
    np.testing.assert_array_equal(read_pgm(path), mask)


def test_dataset_round_trip_bit_exact(tmp_path):
    frames = [make_frame(s) for s in range(6)]
    first = tmp_path / "ds1"
    save_frames(frames, str(first))
    loaded = load_frames(str(first))
    assert len(loaded) == len(frames)
    for a, b in zip(frames, loaded):
        assert a.ground_truth_beam == b.ground_truth_beam
        assert a.vehicles == b.vehicles
        np.testing.assert_array_equal(a.full_mask, b.full_mask)
        np.testing.assert_array_equal(a.gps_history, b.gps_history)
        np.testing.assert_array_equal(a.beam_history, b.beam_history)
        assert [d.bbox for d in a.detections] == [d.bbox for d in b.detections]
    # files -> memory -> files is byte-identical
    second = tmp_path / "ds2"
    save_frames(loaded, str(second))
    assert (first / "manifest.csv").read_bytes() == (second / "manifest.csv").read_bytes()
    for frame in frames:
        name = f"masks/{frame.frame_id:06d}.pgm"
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_column_of_linear_in_azimuth():
    lo, hi = WORLD.camera_fov
    assert column_of(WORLD, lo) == pytest.approx(0.0, abs=1e-9)
    assert column_of(WORLD, hi) == pytest.approx(WORLD.image_size[1], abs=1e-9)
    mid = column_of(WORLD, (lo + hi) / 2)
    assert mid == pytest.approx(WORLD.image_size[1] / 2)
