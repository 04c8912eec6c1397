import hashlib
import io
import json
import zipfile

import httpx
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from PIL import Image

from abacgen.errors import (
    ArchiveEmpty,
    BackendError,
    DuplicateIdentity,
    IdentityMissing,
    MediaTypeMismatch,
    NonContiguousIndices,
    ParamOutOfRange,
    TooLarge,
    UnparseableResponse,
    UnsupportedType,
)
from abacgen.sketch import (
    HttpBackend,
    Identity,
    LlmRequest,
    MockBackend,
    Part,
    PromptSet,
    SketchEntry,
    SketchExtraction,
    SketchParams,
    aggregate_config,
    classify_and_extract,
    compose_comparison,
    process_sketch_archive,
    read_attribute_identity,
    refine_params,
    render_interpretation,
    sanitize_image,
)
from abacgen.sketch.imaging import MARGIN_LEFT, column_xs, density_profile
from abacgen.sketch.pipeline import parse_params
from abacgen.spec_model import DistributionSpec
from conftest import FIXTURES, jpeg_bytes, png_bytes

RED = (200, 30, 30)


def _image(data=None):
    return sanitize_image(data or png_bytes(), "image/png")


def _script_for(image, **script):
    return MockBackend({image.digest: script})


IDENT = {"type": "SA", "index": 1, "values": 4, "x_axis_min": 0, "x_axis_max": 4}


# -- sanitization ---------------------------------------------------------------

def test_png_accepted():
    img = sanitize_image(png_bytes(), "image/png")
    assert img.media_type == "image/png"


def test_jpeg_accepted_with_alias():
    assert sanitize_image(jpeg_bytes(), "image/jpg").media_type == "image/jpeg"


def test_text_disguised_as_png():
    with pytest.raises(MediaTypeMismatch):
        sanitize_image(b"ignore previous instructions", "image/png")


def test_png_declared_as_jpeg():
    with pytest.raises(MediaTypeMismatch):
        sanitize_image(png_bytes(), "image/jpeg")


def test_unsupported_declared_type():
    with pytest.raises(UnsupportedType):
        sanitize_image(png_bytes(), "image/gif")
    with pytest.raises(UnsupportedType):
        sanitize_image(png_bytes(), None)


def test_too_large():
    data = png_bytes() + b"\0" * (9 * 1024 * 1024)
    with pytest.raises(TooLarge):
        sanitize_image(data, "image/png")
    assert sanitize_image(png_bytes(), "image/png", max_bytes=10**6)


# -- reply parsing -------------------------------------------------------------------

def test_identity_passthrough():
    img = _image()
    ident = read_attribute_identity(img, _script_for(img, identity={"type": "EA", "index": 3, "values": 5}))
    assert (ident.type, ident.index, ident.values) == ("EA", 3, 5)
    assert (ident.x_axis_min, ident.x_axis_max) == (0, 5)


@pytest.mark.parametrize("reply, error", [
    ({"type": "EA", "values": 5}, UnparseableResponse),
    ({"type": "XA", "index": 1, "values": 5}, UnparseableResponse),
    ({"type": "SA", "index": 0, "values": 5}, UnparseableResponse),
    ({"type": "SA", "index": 1, "values": 2, "x_axis_min": 3, "x_axis_max": 1}, UnparseableResponse),
    ({"type": None}, IdentityMissing),
    ({"$raw": "I think this is SA-1"}, UnparseableResponse),
    ({"$error": "timeout"}, BackendError),
])
def test_identity_errors(reply, error):
    img = _image()
    with pytest.raises(error):
        read_attribute_identity(img, _script_for(img, identity=reply))


def test_extract_normal():
    img = _image()
    backend = _script_for(img, extract={"family": "Normal", "mu": 4, "sigma": 1.5})
    x = classify_and_extract(img, backend, Identity("SA", 1, 8, 0, 8))
    assert x.params.family == "Normal" and x.params.params == {"mu": 4, "sigma": 1.5}
    assert x.params.to_distribution() == DistributionSpec.normal(4, 2.25)


@pytest.mark.parametrize("reply, error", [
    ({"family": "Poisson", "lambda": -1}, ParamOutOfRange),
    ({"family": "Normal", "mu": 1, "sigma": 0}, ParamOutOfRange),
    ({"family": "Uniform", "low": 3, "high": 3}, ParamOutOfRange),
    ({"family": "Gamma", "k": 2}, UnparseableResponse),
    ({"family": "Normal", "mu": "four", "sigma": 1}, UnparseableResponse),
    ([1, 2], UnparseableResponse),
])
def test_extract_errors(reply, error):
    img = _image()
    with pytest.raises(error):
        classify_and_extract(img, _script_for(img, extract=reply), Identity("SA", 1, 4, 0, 4))


def test_extract_request_has_json_directive_and_default_prompt():
    seen = []

    class Spy:
        configured = True

        def complete(self, request):
            seen.append(request)
            return {"family": "Uniform", "low": 0, "high": 1}

    classify_and_extract(_image(), Spy(), Identity("SA", 1, 2, 0, 2))
    [req] = seen
    assert req.response_mime_type == "application/json"
    assert "Normal, Poisson, or Uniform" in req.parts[0].text
    assert req.parts[1].media_type == "image/png"


# -- rendering --------------------------------------------------------------------------

def _red_columns(png):
    arr = np.asarray(Image.open(io.BytesIO(png)).convert("RGB"))
    mask = np.all(arr == RED, axis=2)
    return arr, mask


@pytest.mark.parametrize("mu", [2.0, 3.3, 6.75])
def test_normal_peak_at_mu(mu):
    png = render_interpretation("Normal", {"mu": mu, "sigma": 1.2}, 0, 10)
    arr, mask = _red_columns(png)
    assert arr.shape[:2] == (384, 512)
    rows, cols = np.nonzero(mask)
    top = rows.min()
    peak_cols = cols[rows == top]
    xs = column_xs(0, 10, 512)
    expected = MARGIN_LEFT + int(np.argmin(np.abs(xs - mu)))
    assert abs(peak_cols.mean() - expected) <= 1


def test_uniform_is_flat_inside_and_zero_outside():
    xs = column_xs(0, 10, 512)
    ys = density_profile("Uniform", {"low": 2, "high": 6}, xs)
    inside = (xs >= 2) & (xs <= 6)
    assert np.all(ys[~inside] == 0)
    assert np.ptp(ys[inside]) == 0 and ys[inside][0] > 0


def test_render_deterministic():
    a = render_interpretation("Poisson", {"lambda": 3}, 0, 8)
    assert a == render_interpretation("Poisson", {"lambda": 3}, 0, 8)
    assert Image.open(io.BytesIO(render_interpretation("Normal", {"mu": 1, "sigma": 1}, 0, 3, 300, 200))).size == (300, 200)


def test_compose_equal_sizes():
    a = render_interpretation("Normal", {"mu": 1, "sigma": 1}, 0, 3)
    out = Image.open(io.BytesIO(compose_comparison(a, a)))
    assert out.size == (1024, 384)


def test_compose_scales_shorter_image():
    left = png_bytes(200, 100, (0, 0, 255))
    right = png_bytes(512, 384)
    out = Image.open(io.BytesIO(compose_comparison(left, right))).convert("RGB")
    assert out.size == (768 + 512, 384)
    # original stays on the left
    assert out.getpixel((10, 10)) == (0, 0, 255)
    assert out.getpixel((800, 10)) == (255, 255, 255)


@given(st.integers(10, 300), st.integers(10, 300), st.integers(10, 300), st.integers(10, 300))
@settings(max_examples=25, deadline=None)
def test_compose_width_is_sum_of_scaled_widths(w1, h1, w2, h2):
    out = Image.open(io.BytesIO(compose_comparison(png_bytes(w1, h1), png_bytes(w2, h2))))
    h = max(h1, h2)
    scaled = lambda w, hh: w if hh == h else max(1, round(w * h / hh))
    assert out.size == (scaled(w1, h1) + scaled(w2, h2), h)


# -- refinement ------------------------------------------------------------------------

def _extraction(image, family="Normal", **params):
    ident = Identity("SA", 1, 4, 0, 4)
    p = parse_params({"family": family, **params})
    return SketchExtraction(ident, p)


def test_refine_fixpoint_one_round():
    img = _image()
    backend = _script_for(img, refine=[{"family": "Normal", "mu": 2, "sigma": 1}])
    x = refine_params(_extraction(img, mu=2, sigma=1), img, backend)
    assert x.iterations == 1
    assert x.params.params == {"mu": 2, "sigma": 1}
    assert len(x.comparisons) == 1 and not x.warnings


def test_refine_converges_on_second_round():
    img = _image()
    backend = _script_for(img, refine=[{"family": "Normal", "mu": 2, "sigma": 2},
                                       {"family": "Normal", "mu": 2, "sigma": 2}])
    x = refine_params(_extraction(img, mu=2, sigma=1), img, backend)
    assert x.iterations == 2
    assert x.params.params["sigma"] == 2


def test_refine_error_keeps_last_valid():
    img = _image()
    backend = _script_for(img, refine=[{"family": "Normal", "mu": 2, "sigma": 2}, {"$error": "boom"}])
    x = refine_params(_extraction(img, mu=2, sigma=1), img, backend)
    assert x.params.params["sigma"] == 2
    assert x.warnings and "round 2" in x.warnings[0]


def test_refine_out_of_range_reply_is_best_effort():
    img = _image()
    backend = _script_for(img, refine=[{"family": "Normal", "mu": 2, "sigma": -1}])
    x = refine_params(_extraction(img, mu=2, sigma=1), img, backend)
    assert x.params.params["sigma"] == 1 and x.warnings


def test_refine_stops_at_max_iterations():
    img = _image()
    replies = [{"family": "Normal", "mu": 2, "sigma": s} for s in (2, 3, 4, 5, 6)]
    x = refine_params(_extraction(img, mu=2, sigma=1), img, _script_for(img, refine=replies), max_iterations=3)
    assert x.iterations == 3 and x.params.params["sigma"] == 4


def test_refine_tolerance_is_relative():
    img = _image()
    backend = _script_for(img, refine=[{"family": "Normal", "mu": 2000, "sigma": 1 + 5e-7}])
    x = refine_params(_extraction(img, mu=2000.0005, sigma=1), img, backend)
    assert x.iterations == 1


@given(st.lists(st.floats(0.1, 5), min_size=0, max_size=6), st.integers(1, 4))
@settings(max_examples=20, deadline=None)
def test_refine_always_terminates(sigmas, max_iter):
    img = _image()
    replies = [{"family": "Normal", "mu": 2, "sigma": s} for s in sigmas]
    x = refine_params(_extraction(img, mu=2, sigma=1), img, _script_for(img, refine=replies), max_iterations=max_iter)
    assert 1 <= x.iterations <= max_iter
    assert x.params.params["sigma"] > 0


def test_refine_prompt_interpolation():
    prompts = PromptSet.load()
    text = prompts.refine_text(SketchParams("Normal", (("mu", 2.0), ("sigma", 1.0))), 0, 7)
    assert "{current_params}" not in text and "{x_axis_min}" not in text
    assert '"mu": 2.0' in text and "7" in text
    assert "Look at the edges of the curve" in prompts.refine


def test_prompt_override(tmp_path):
    (tmp_path / "extract.txt").write_text("custom extract")
    prompts = PromptSet.load(tmp_path)
    assert prompts.extract == "custom extract"
    assert prompts.refine == PromptSet.load().refine


# -- archives --------------------------------------------------------------------------

def test_fixture_archive(fixtures_dir):
    backend = MockBackend.from_file(fixtures_dir / "mock_script.json")
    result = process_sketch_archive(fixtures_dir / "sketches", backend)
    frag = result.fragment.to_dict()
    assert frag["subject_distributions"] == [{"distribution": "U"}, {"distribution": "N", "mean": 2.0, "variance": 1.44}]
    assert frag["object_distributions"] == [{"distribution": "P", "lambda": 2.0}]
    assert frag["subject_attributes_values"] == [3, 4]
    assert frag["object_attributes_values"] == [5]
    assert frag["environment_attributes_count"] == 0
    assert [e["name"] for e in result.log] == sorted(e["name"] for e in result.log)
    [rejected] = result.failures
    assert rejected["name"] == "notes.txt" and rejected["status"] == "rejected"
    assert set(result.comparisons) == {"attestation/sketches/SA_1.png", "attestation/sketches/SA_2.png",
                                       "attestation/sketches/OA_1.png"}
    sa2 = next(e for e in result.log if e.get("attribute") == "SA_2")
    assert sa2["iterations"] == 2


def _zip_of(directory, rename=lambda n: n):
    buf = io.BytesIO()
    with zipfile.ZipFile(buf, "w") as zf:
        for p in sorted(directory.iterdir()):
            zf.writestr(rename(p.name), p.read_bytes())
    return buf.getvalue()


def test_zip_source_equals_directory(fixtures_dir):
    script = json.loads((fixtures_dir / "mock_script.json").read_text())
    a = process_sketch_archive(fixtures_dir / "sketches", MockBackend(script))
    b = process_sketch_archive(_zip_of(fixtures_dir / "sketches"), MockBackend(script))
    assert a.fragment == b.fragment and a.comparisons == b.comparisons


@given(st.permutations(range(4)), st.lists(st.text("abcdefgh", min_size=1, max_size=6), min_size=4, max_size=4, unique=True))
@settings(max_examples=15, deadline=None)
def test_filename_independence(perm, stems):
    fixtures_dir = FIXTURES
    script = json.loads((fixtures_dir / "mock_script.json").read_text())
    files = sorted((fixtures_dir / "sketches").iterdir())
    base = process_sketch_archive(fixtures_dir / "sketches", MockBackend(script))
    entries = []
    for i, p in zip(perm, files):
        ext = p.suffix
        entries.append(SketchEntry(f"{stems[i]}{ext}", p.read_bytes(), "image/png" if ext == ".png" else "text/plain"))
    renamed = process_sketch_archive(entries, MockBackend(script))
    assert renamed.fragment == base.fragment
    assert renamed.comparisons == base.comparisons


def test_text_file_renamed_png_rejected(fixtures_dir, mock_script):
    entries = [SketchEntry(p.name, p.read_bytes(), "image/png") for p in sorted((fixtures_dir / "sketches").iterdir())]
    result = process_sketch_archive(entries, MockBackend(mock_script))
    [bad] = result.failures
    assert bad["error"] == "MediaTypeMismatch"
    assert len(result.extractions) == 3


def test_empty_archive(tmp_path, mock_script):
    with pytest.raises(ArchiveEmpty):
        process_sketch_archive(tmp_path, MockBackend(mock_script))
    (tmp_path / "readme.txt").write_text("hi")
    with pytest.raises(ArchiveEmpty):
        process_sketch_archive(tmp_path, MockBackend(mock_script))
    buf = io.BytesIO()
    zipfile.ZipFile(buf, "w").close()
    with pytest.raises(ArchiveEmpty):
        process_sketch_archive(buf.getvalue(), MockBackend(mock_script))


def test_noncontiguous_indices(fixtures_dir, mock_script):
    with pytest.raises(NonContiguousIndices):
        process_sketch_archive(fixtures_dir / "gap", MockBackend(mock_script))


def test_duplicate_identity(tmp_path, fixtures_dir, mock_script):
    src = fixtures_dir / "sketches" / "zz_first.png"
    other = png_bytes(30, 30)
    (tmp_path / "a.png").write_bytes(src.read_bytes())
    (tmp_path / "b.png").write_bytes(other)
    script = dict(mock_script)
    script[hashlib.sha256(other).hexdigest()] = mock_script[hashlib.sha256(src.read_bytes()).hexdigest()]
    with pytest.raises(DuplicateIdentity):
        process_sketch_archive(tmp_path, MockBackend(script))


def test_aggregate_orders_by_index():
    def x(t, i, n):
        return SketchExtraction(Identity(t, i, n, 0, n), SketchParams("Uniform", (("low", 0.0), ("high", 1.0))))

    frag = aggregate_config([x("SA", 2, 5), x("EA", 1, 2), x("SA", 1, 3)])
    assert frag.cardinalities == {"subject": (3, 5), "object": (), "environment": (2,)}
    d = frag.to_dict()
    assert (d["subject_attributes_count"], d["object_attributes_count"], d["environment_attributes_count"]) == (2, 0, 1)


def test_per_image_backend_failure_logged(fixtures_dir, mock_script):
    script = {k: dict(v) for k, v in mock_script.items()}
    first = hashlib.sha256((fixtures_dir / "sketches" / "mm_third.png").read_bytes()).hexdigest()
    script[first]["identity"] = {"$error": "unavailable"}
    # OA_1 fails; SA_1 and SA_2 still form a valid fragment
    result = process_sketch_archive(fixtures_dir / "sketches", MockBackend(script))
    failed = [e for e in result.failures if e["status"] == "failed"]
    assert [e["name"] for e in failed] == ["mm_third.png"]
    assert result.fragment.to_dict()["object_attributes_count"] == 0


def test_all_backend_failures_raise(fixtures_dir):
    with pytest.raises(BackendError):
        process_sketch_archive(fixtures_dir / "sketches", MockBackend({}))


def test_mock_pipeline_reproducible(fixtures_dir, mock_script):
    a = process_sketch_archive(fixtures_dir / "sketches", MockBackend(mock_script))
    b = process_sketch_archive(fixtures_dir / "sketches", MockBackend(mock_script), parallelism=1)
    assert a.comparisons == b.comparisons and a.log == b.log


# -- HTTP backend -----------------------------------------------------------------------

def _request():
    return LlmRequest(task="extract", parts=(Part.of_text("hi"), Part.of_image(b"\x89PNG", "image/png")),
                      sketch_digest="d")


def test_http_backend_wire_contract(monkeypatch):
    monkeypatch.setenv("TEST_VISION_KEY", "sekret")
    captured = {}

    def handler(request):
        captured["auth"] = request.headers.get("authorization")
        captured["body"] = json.loads(request.content)
        return httpx.Response(200, json={"content": json.dumps({"family": "Poisson", "lambda": 2})})

    backend = HttpBackend("http://vision.test/v1", "m1", "TEST_VISION_KEY", transport=httpx.MockTransport(handler))
    assert backend.configured
    assert backend.complete(_request()) == {"family": "Poisson", "lambda": 2}
    assert captured["auth"] == "Bearer sekret"
    body = captured["body"]
    assert body["model"] == "m1" and body["task"] == "extract"
    assert body["response_mime_type"] == "application/json"
    assert body["parts"][0] == {"type": "text", "text": "hi"}
    assert body["parts"][1]["type"] == "image" and body["parts"][1]["media_type"] == "image/png"


def test_http_backend_plain_json_body():
    backend = HttpBackend("http://x", "m", transport=httpx.MockTransport(lambda r: httpx.Response(200, json={"a": 1})))
    assert backend.complete(_request()) == {"a": 1}


@pytest.mark.parametrize("handler, error", [
    (lambda r: httpx.Response(500, text="oops"), BackendError),
    (lambda r: httpx.Response(200, text="not json"), UnparseableResponse),
    (lambda r: (_ for _ in ()).throw(httpx.ReadTimeout("slow")), BackendError),
    (lambda r: (_ for _ in ()).throw(httpx.ConnectError("down")), BackendError),
])
def test_http_backend_errors(handler, error):
    backend = HttpBackend("http://x", "m", transport=httpx.MockTransport(handler))
    with pytest.raises(error):
        backend.complete(_request())


def test_http_backend_missing_credential(monkeypatch):
    monkeypatch.delenv("ABSENT_KEY", raising=False)
    backend = HttpBackend("http://x", "m", "ABSENT_KEY")
    assert not backend.configured
    with pytest.raises(BackendError) as info:
        backend.complete(_request())
    assert "ABSENT_KEY" in str(info.value)
