import numpy as np
import pytest

from denoiselab import Image, ImageFormatError, Roi, crop, load_image, save_image, \
    split_slices, stack_slices


def gray(values, source_max=255, name="t"):
    arr = np.asarray(values, dtype=np.float32)
    return Image(arr[None, None], source_max=source_max, name=name)


class TestNetpbmLoad:
    def test_p5_full_scale_pixel(self, tmp_path):
        path = tmp_path / "one.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\xff")
        img = load_image(path)
        assert (img.slices, img.channels, img.height, img.width) == (1, 1, 1, 1)
        assert img.data[0, 0, 0, 0] == 1.0
        assert img.source_max == 255

    def test_p5_zero_pixel(self, tmp_path):
        path = tmp_path / "zero.pgm"
        path.write_bytes(b"P5\n1 1\n255\n\x00")
        assert load_image(path).data[0, 0, 0, 0] == 0.0

    def test_p2_ascii_hand_parse(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P2\n2 2\n255\n0 255 255 0\n")
        img = load_image(path)
        assert np.array_equal(img.data[0, 0], [[0, 1], [1, 0]])

    def test_p2_with_comment(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P2 # comment\n2 1 # another\n255\n128 0\n")
        img = load_image(path)
        assert img.data[0, 0, 0, 0] == np.float32(128 / 255)

    def test_p5_16bit_big_endian(self, tmp_path):
        path = tmp_path / "w.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x01\x00")  # 0x0100 = 256
        img = load_image(path)
        assert img.source_max == 65535
        assert img.data[0, 0, 0, 0] == np.float32(256 / 65535)

    def test_p6_planar_channel_convention(self, tmp_path):
        # one pixel R=10 G=20 B=30, second pixel R=40 G=50 B=60
        path = tmp_path / "c.ppm"
        path.write_bytes(b"P6\n2 1\n255\n" + bytes([10, 20, 30, 40, 50, 60]))
        img = load_image(path)
        assert img.channels == 3
        expect = np.array([[[10, 40]], [[20, 50]], [[30, 60]]], dtype=np.float32) / 255
        assert np.array_equal(img.data[0], expect)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P7\n1 1\n255\n\x00")
        with pytest.raises(ImageFormatError):
            load_image(path)

    def test_malformed_header_names_offset(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\nfoo 1\n255\n\x00")
        with pytest.raises(ImageFormatError, match="byte offset 3"):
            load_image(path)

    def test_truncated_raster(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x00")
        with pytest.raises(ImageFormatError, match="truncated"):
            load_image(path)

    def test_unsupported_maxval(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P5\n1 1\n1023\n\x00\x00")
        with pytest.raises(ImageFormatError, match="maxval"):
            load_image(path)

    def test_ascii_sample_exceeds_maxval(self, tmp_path):
        path = tmp_path / "x.pgm"
        path.write_bytes(b"P2\n1 1\n255\n300\n")
        with pytest.raises(ImageFormatError, match="exceeds maxval"):
            load_image(path)


class TestSave:
    def test_full_scale_byte(self, tmp_path):
        path = tmp_path / "o.pgm"
        save_image(gray([[1.0]]), path)
        assert path.read_bytes().endswith(b"\xff")

    def test_negative_clamps_to_zero(self, tmp_path):
        path = tmp_path / "o.pgm"
        save_image(gray([[-0.2]]), path)
        assert path.read_bytes().endswith(b"\n\x00")

    def test_half_to_even_rounding(self, tmp_path):
        # 0.5 * 255 = 127.5 rounds to the even value 128
        path = tmp_path / "o.pgm"
        save_image(gray([[0.5]]), path)
        assert path.read_bytes().endswith(b"\x80")

    def test_multi_slice_netpbm_rejected(self, tmp_path):
        img = Image(np.zeros((2, 1, 4, 4), np.float32))
        with pytest.raises(ValueError, match=r"\.rt"):
            save_image(img, tmp_path / "o.pgm")

    def test_channel_extension_mismatch(self, tmp_path):
        img = Image(np.zeros((1, 3, 2, 2), np.float32))
        with pytest.raises(ValueError, match="ppm"):
            save_image(img, tmp_path / "o.pgm")


class TestRoundTrip:
    @pytest.mark.parametrize("source_max", [255, 65535])
    @pytest.mark.parametrize("channels", [1, 3])
    def test_netpbm_within_half_lsb(self, tmp_path, source_max, channels):
        rng = np.random.default_rng(1)
        img = Image(rng.random((1, channels, 7, 5)).astype(np.float32),
                    source_max=source_max)
        path = tmp_path / ("r.%s" % ("pgm" if channels == 1 else "ppm"))
        save_image(img, path)
        back = load_image(path)
        assert back.source_max == source_max
        tol = 1.0 / (2 * source_max) + 1e-9
        assert np.max(np.abs(back.data - img.data)) <= tol

    def test_rt_bit_exact(self, tmp_path):
        rng = np.random.default_rng(2)
        # out-of-range values must survive the raw-tensor container untouched
        data = (rng.random((3, 3, 6, 4)) * 1.4 - 0.2).astype(np.float32)
        img = Image(data, source_max=65535, name="stack")
        path = tmp_path / "r.rt"
        save_image(img, path)
        back = load_image(path)
        assert np.array_equal(back.data, img.data)
        assert back.source_max == 65535
        assert back.name == "stack"

    def test_rt_truncated_payload(self, tmp_path):
        img = Image(np.zeros((1, 1, 4, 4), np.float32))
        path = tmp_path / "r.rt"
        save_image(img, path)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ImageFormatError, match="truncated payload"):
            load_image(path)

    def test_rt_bad_magic(self, tmp_path):
        path = tmp_path / "r.rt"
        path.write_bytes(b"XXXX\x00\x00\x00\x00")
        with pytest.raises(ImageFormatError, match="magic"):
            load_image(path)


class TestCropAndSlices:
    def test_crop_dimensions(self):
        img = Image(np.zeros((1, 1, 512, 512), np.float32))
        out = crop(img, Roi(0, 0, 100, 100))
        assert (out.height, out.width) == (100, 100)

    def test_identity_crop(self):
        rng = np.random.default_rng(3)
        img = Image(rng.random((1, 3, 8, 9)).astype(np.float32))
        out = crop(img, Roi(0, 0, 9, 8))
        assert np.array_equal(out.data, img.data)

    def test_corner_selection(self):
        img = gray([[0.1, 0.2], [0.3, 0.4]])
        assert crop(img, Roi(1, 1, 1, 1)).data[0, 0, 0, 0] == np.float32(0.4)

    def test_out_of_bounds_roi(self):
        img = gray([[0.0, 0.0], [0.0, 0.0]])
        with pytest.raises(ValueError, match="exceeds"):
            crop(img, Roi(1, 0, 2, 1))

    def test_crop_independent_of_outside_pixels(self):
        rng = np.random.default_rng(4)
        base = rng.random((1, 1, 10, 10)).astype(np.float32)
        roi = Roi(2, 3, 4, 5)
        ref = crop(Image(base), roi)
        mutated = base.copy()
        mutated[0, 0, 0, 0] = 0.99
        mutated[0, 0, 9, 9] = 0.01
        assert np.array_equal(crop(Image(mutated), roi).data, ref.data)

    def test_split_stack_round_trip(self):
        rng = np.random.default_rng(5)
        img = Image(rng.random((3, 1, 6, 6)).astype(np.float32))
        parts = split_slices(img)
        assert len(parts) == 3
        assert all(p.slices == 1 for p in parts)
        assert np.array_equal(stack_slices(parts).data, img.data)

    def test_stack_shape_mismatch(self):
        a = Image(np.zeros((1, 1, 64, 64), np.float32))
        b = Image(np.zeros((1, 1, 32, 32), np.float32))
        with pytest.raises(ValueError, match="mismatch"):
            stack_slices([a, b])

    def test_stack_empty(self):
        with pytest.raises(ValueError):
            stack_slices([])


def test_non_finite_data_rejected():
    with pytest.raises(ValueError, match="finite"):
        Image(np.full((1, 1, 2, 2), np.nan, np.float32))


def test_bad_source_max_rejected():
    with pytest.raises(ValueError, match="source_max"):
        Image(np.zeros((1, 1, 2, 2), np.float32), source_max=1024)
