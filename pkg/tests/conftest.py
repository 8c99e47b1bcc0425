import pytest

from fluidbench.client import EndpointConfig
from fluidbench.mockserver import MockProfile, MockServer


@pytest.fixture
def start_mock():
    """Factory that starts mock servers and stops them at teardown."""
    servers = []

    def _start(profile: MockProfile, **kwargs) -> MockServer:
        kwargs.setdefault("record_emissions", True)
        server = MockServer(profile, **kwargs).start()
        servers.append(server)
        return server

    yield _start
    for server in servers:
        server.stop()


def endpoint_for(server: MockServer, **kwargs) -> EndpointConfig:
    kwargs.setdefault("timeout_s", 60.0)
    return EndpointConfig(base_url=server.base_url, model="mock-model", **kwargs)
