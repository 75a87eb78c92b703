import numpy as np
import pytest

from marginal_correspondence.errors import ImageFormatError
from marginal_correspondence.imageio import (
    decode_pnm,
    encode_pnm,
    read_image,
    to_bytes,
    write_heatmap,
    write_image,
)


def test_ppm_header_and_raster():
    image = np.zeros((2, 3, 3))
    image[0, 0] = [1.0, 0.5, 0.0]
    data = encode_pnm(image)
    assert data.startswith(b"P6\n3 2\n255\n")
    assert data[len(b"P6\n3 2\n255\n") :][:3] == bytes([255, 128, 0])
    assert len(data) == len(b"P6\n3 2\n255\n") + 2 * 3 * 3


def test_pgm_write_read(tmp_path):
    rng = np.random.default_rng(0)
    image = np.round(rng.uniform(0, 1, (5, 4, 1)) * 255) / 255
    path = write_image(tmp_path / "gray.pgm", image)
    assert path.read_bytes().startswith(b"P5")
    np.testing.assert_array_equal(read_image(path), image)


def test_values_are_rounded_and_clipped():
    np.testing.assert_array_equal(to_bytes(np.array([-0.5, 0.0, 0.5, 1.0, 2.0])), [0, 0, 128, 255, 255])


def test_comments_in_header_are_skipped():
    data = b"P5\n# made by hand\n2 1\n# another\n255\n" + bytes([0, 255])
    np.testing.assert_allclose(decode_pnm(data)[:, :, 0], [[0.0, 1.0]])


@pytest.mark.parametrize(
    "data",
    [
        b"P3\n1 1\n255\n" + bytes(3),
        b"P5\n2 2\n255\n" + bytes(3),
        b"P5\n2 2\n65535\n" + bytes(8),
        b"P5\nx 2\n255\n" + bytes(4),
        b"P5\n2",
    ],
)
def test_malformed_files_rejected(data):
    with pytest.raises(ImageFormatError):
        decode_pnm(data)


def test_two_channel_image_rejected():
    with pytest.raises(ImageFormatError):
        encode_pnm(np.zeros((2, 2, 2)))


def test_heatmap_maps_unit_interval(tmp_path):
    path = write_heatmap(tmp_path / "scm.pgm", np.array([[-1.0, 0.0, 1.0]]))
    np.testing.assert_array_equal(np.rint(read_image(path)[0, :, 0] * 255), [0, 128, 255])
