"""HTTP scoring service and client: parity with local oracles, error mapping.

Every test spins up a real server on a loopback port and talks to it over
actual sockets; nothing is mocked.  Parity tests compare against a twin
embedder built from the same seed, fed the same 8-bit quantized images the
wire produces.
"""

import base64
import json
import threading
import urllib.error
import urllib.request

import numpy as np
import pytest

from facet.basis import EigenBasis
from facet.errors import (
    BudgetExhaustedError,
    DegenerateInputError,
    FormatError,
    GeometryError,
    TransportError,
    UnknownIdentityError,
)
from facet.image import decode_netpbm, encode_netpbm, reshape
from facet.oracle import make_random_embedder, with_budget, with_quantization
from facet.recovery import RecoveryConfig, recover_single
from facet.wire import PROTOCOL_VERSION, connect, serve

GEOM = (5, 4, 1)


def quantized(img):
    return decode_netpbm(encode_netpbm(img))


def embedder(seed=31, geometry=GEOM, dim=12):
    return make_random_embedder(seed=seed, geometry=geometry, dim=dim)


def target_image(rng=None):
    rng = rng or np.random.default_rng(8)
    return rng.uniform(0.1, 0.9, size=GEOM)


@pytest.fixture
def service():
    inner = embedder()
    handle = serve(inner, ("127.0.0.1", 0))
    yield handle, inner
    handle.close()


def raw_post(endpoint, path, payload):
    req = urllib.request.Request(
        endpoint + path,
        data=json.dumps(payload).encode(),
        headers={"Content-Type": "application/json"},
        method="POST",
    )
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


class TestHealth:
    def test_health_fields(self, service):
        handle, _ = service
        with urllib.request.urlopen(handle.endpoint + "/v1/health", timeout=5) as resp:
            body = json.loads(resp.read())
        assert body["protocol_version"] == PROTOCOL_VERSION
        assert (body["height"], body["width"], body["channels"]) == GEOM
        assert body["queries_used"] == 0
        assert body["budget"] is None

    def test_health_reports_budget_and_usage(self):
        inner = with_budget(embedder(), 18)
        handle = serve(inner)
        try:
            client = connect(handle.endpoint)
            client.enroll("t", target_image())
            client.score_batch([target_image() for _ in range(3)], "t")
            with urllib.request.urlopen(handle.endpoint + "/v1/health", timeout=5) as resp:
                body = json.loads(resp.read())
            assert body["queries_used"] == 3
            assert body["budget"] == 18
            assert client.budget() == 18
        finally:
            handle.close()

    def test_unknown_path_is_404(self, service):
        handle, _ = service
        with pytest.raises(urllib.error.HTTPError) as err:
            urllib.request.urlopen(handle.endpoint + "/v1/nope", timeout=5)
        assert err.value.code == 404
        assert json.loads(err.value.read())["error"] == "not_found"


class TestScoreParity:
    def test_wire_scores_equal_local_on_quantized_images(self, service):
        handle, _ = service
        rng = np.random.default_rng(3)
        target = target_image(rng)
        probes = [rng.uniform(0, 1, size=GEOM) for _ in range(6)]

        client = connect(handle.endpoint)
        client.enroll("t", target)
        remote = client.score_batch(probes, "t")

        twin = embedder()
        twin.enroll("t", quantized(target))
        local = twin.score_batch([quantized(p) for p in probes], "t")
        assert np.array_equal(remote, local)

    def test_scores_within_range_and_order(self, service):
        handle, _ = service
        client = connect(handle.endpoint)
        target = target_image()
        client.enroll("t", target)
        probes = [target, np.full(GEOM, 0.5), np.zeros(GEOM)]
        scores = client.score_batch(probes, "t")
        assert scores.shape == (3,)
        assert np.all(scores >= -1) and np.all(scores <= 1)
        assert scores[0] > 0.99  # the enrolled image against itself

    def test_three_image_batch_advances_both_ends(self, service):
        handle, inner = service
        client = connect(handle.endpoint)
        client.enroll("t", target_image())
        assert client.queries_used() == 0
        client.score_batch([target_image() for _ in range(3)], "t")
        assert client.queries_used() == 3
        assert inner.queries_used() == 3

    def test_enroll_does_not_consume_budget(self, service):
        handle, inner = service
        client = connect(handle.endpoint)
        client.enroll("t", target_image())
        assert client.queries_used() == 0 == inner.queries_used()


class TestRecoveryThroughWire:
    def test_identical_choices_to_local_quantized_run(self, service):
        handle, _ = service
        h, w, c = GEOM
        rng = np.random.default_rng(11)
        q, _ = np.linalg.qr(rng.standard_normal((h * w * c, 3)))
        basis = EigenBasis(h, w, c, q)
        target = np.clip(reshape(q @ np.array([0.7, -0.2, 0.4]) + 0.5, h, w, c), 0, 1)
        cfg = RecoveryConfig(batch_size=3, query_budget=60, restarts=0, seed=5)

        client = connect(handle.endpoint)
        client.enroll("t", target)
        remote_run = recover_single(client, "t", basis, cfg)

        local = with_quantization(embedder())
        local.enroll("t", target)
        local_run = recover_single(local, "t", basis, cfg)

        remote_rows = [vars(r) for r in remote_run.trajectory]
        local_rows = [vars(r) for r in local_run.trajectory]
        assert remote_rows == local_rows
        assert np.array_equal(remote_run.coeffs, local_run.coeffs)
        assert remote_run.final_score == local_run.final_score


class TestErrorMapping:
    def test_empty_batch(self, service):
        handle, _ = service
        client = connect(handle.endpoint)
        client.enroll("t", target_image())
        with pytest.raises(FormatError) as err:
            client.score_batch([], "t")
        assert err.value.field == "empty_batch"

    def test_unknown_identity(self, service):
        handle, _ = service
        client = connect(handle.endpoint)
        with pytest.raises(UnknownIdentityError):
            client.score_batch([target_image()], "ghost")

    def test_geometry_mismatch(self, service):
        handle, _ = service
        client = connect(handle.endpoint)
        client.enroll("t", target_image())
        wrong = np.full((3, 3, 1), 0.5)
        with pytest.raises(GeometryError):
            client.score_batch([wrong], "t")

    def test_degenerate_enrollment(self, service):
        handle, _ = service
        client = connect(handle.endpoint)
        with pytest.raises(DegenerateInputError):
            client.enroll("t", np.zeros(GEOM))

    def test_bad_image_payload(self, service):
        handle, _ = service
        status, body = raw_post(handle.endpoint, "/v1/score", {
            "protocol_version": 1, "id": "t", "images": ["@@not-base64@@"],
        })
        assert status == 400
        assert body["error"] == "bad_image"

    def test_undecodable_bytes_are_bad_image(self, service):
        handle, _ = service
        junk = base64.b64encode(b"JUNK not a netpbm payload").decode()
        status, body = raw_post(handle.endpoint, "/v1/score", {
            "protocol_version": 1, "id": "t", "images": [junk],
        })
        assert status == 400
        assert body["error"] == "bad_image"

    def test_bad_image_consumes_no_budget(self, service):
        handle, inner = service
        good = base64.b64encode(encode_netpbm(target_image())).decode()
        junk = base64.b64encode(b"JUNK").decode()
        status, body = raw_post(handle.endpoint, "/v1/score", {
            "protocol_version": 1, "id": "t", "images": [good, junk],
        })
        assert status == 400
        assert inner.queries_used() == 0  # whole batch rejected before scoring

    def test_wrong_protocol_version(self, service):
        handle, _ = service
        status, body = raw_post(handle.endpoint, "/v1/score", {
            "protocol_version": 2, "id": "t", "images": [],
        })
        assert status == 400
        assert body["error"] == "unsupported_protocol"

    def test_missing_protocol_version(self, service):
        handle, _ = service
        status, body = raw_post(handle.endpoint, "/v1/score", {
            "id": "t", "images": [],
        })
        assert status == 400
        assert body["error"] == "bad_request"

    @pytest.mark.parametrize("payload", [
        {"protocol_version": 1, "images": ["x"]},          # no id
        {"protocol_version": 1, "id": "", "images": ["x"]},
        {"protocol_version": 1, "id": "t", "images": "x"},  # not a list
        [1, 2, 3],                                          # not an object
    ])
    def test_malformed_requests(self, service, payload):
        handle, _ = service
        status, body = raw_post(handle.endpoint, "/v1/score", payload)
        assert status == 400
        assert body["error"] == "bad_request"

    def test_budget_exhaustion_maps_to_429(self):
        inner = with_budget(embedder(), 7)
        handle = serve(inner)
        try:
            client = connect(handle.endpoint)
            client.enroll("t", target_image())
            client.score_batch([target_image() for _ in range(4)], "t")
            with pytest.raises(BudgetExhaustedError) as err:
                client.score_batch([target_image() for _ in range(4)], "t")
            assert err.value.used == 4
            assert err.value.limit == 7
            assert err.value.attempted == 4
            assert client.queries_used() == 4
            assert inner.queries_used() == 4
        finally:
            handle.close()


class TestTransport:
    def test_server_down_is_transport_error(self):
        inner = embedder()
        handle = serve(inner)
        endpoint = handle.endpoint
        handle.close()
        with pytest.raises(TransportError):
            connect(endpoint)

    def test_dead_endpoint_mid_session(self):
        inner = embedder()
        handle = serve(inner)
        client = connect(handle.endpoint)
        client.enroll("t", target_image())
        handle.close()
        with pytest.raises(TransportError):
            client.score_batch([target_image()], "t")

    def test_trailing_slash_endpoint(self, service):
        handle, _ = service
        client = connect(handle.endpoint + "/")
        assert client.geometry == GEOM


class TestConcurrentClients:
    def test_shared_budget_never_oversubscribed(self):
        inner = with_budget(embedder(), 20)
        handle = serve(inner)
        try:
            hits = []
            lock = threading.Lock()

            def worker(seed):
                client = connect(handle.endpoint)
                rng = np.random.default_rng(seed)
                for _ in range(5):
                    imgs = [rng.uniform(0, 1, size=GEOM) for _ in range(2)]
                    try:
                        client.score_batch(imgs, "t")
                        with lock:
                            hits.append(2)
                    except BudgetExhaustedError:
                        pass

            enroller = connect(handle.endpoint)
            enroller.enroll("t", target_image())
            threads = [threading.Thread(target=worker, args=(s,)) for s in range(4)]
            for t in threads:
                t.start()
            for t in threads:
                t.join()
            assert inner.queries_used() == sum(hits) <= 20
        finally:
            handle.close()


class TestServeArguments:
    def test_string_bind_address(self):
        handle = serve(embedder(), "127.0.0.1:0")
        try:
            assert connect(handle.endpoint).geometry == GEOM
        finally:
            handle.close()

    def test_explicit_geometry_for_bare_oracle(self):
        class Bare:
            def __init__(self):
                self._n = 0

            def enroll(self, identity, image):
                pass

            def score_batch(self, images, identity):
                self._n += len(images)
                return np.zeros(len(images))

            def queries_used(self):
                return self._n

            def budget(self):
                return None

        handle = serve(Bare(), geometry=GEOM)
        try:
            client = connect(handle.endpoint)
            assert client.geometry == GEOM
            client.enroll("t", target_image())
            assert np.array_equal(client.score_batch([target_image()], "t"), [0.0])
        finally:
            handle.close()

    def test_no_geometry_anywhere_rejected(self):
        class NoGeom:
            def enroll(self, identity, image):
                pass

            def score_batch(self, images, identity):
                return np.zeros(len(images))

            def queries_used(self):
                return 0

        with pytest.raises(GeometryError):
            serve(NoGeom())
