import pytest

from max10audit.device import DeviceState, FuseSet
from max10audit.fileformats import pof
from max10audit.profiles import load_profile
from max10audit.transport import SimTransport, TapController

KEY = bytes(range(16))


@pytest.fixture(scope="session")
def prof():
    return load_profile("10m08")


@pytest.fixture(scope="session")
def prof16():
    return load_profile("10m16sce144")


def make_device(profile, fuses=FuseSet(), fill_seed=7):
    image = pof.synthesize_pof(profile, fuses, fill_seed)
    return DeviceState.from_flash_image(profile, image)


def make_controller(device):
    return TapController(SimTransport(device), device.profile.ir_width)


# the eight marker-fuse combinations (key field drives the encrypted marker)
FUSE_COMBOS = [
    FuseSet(verify_protect=vp, encrypted_pof_only=ep, jtag_secure=js)
    for vp in (False, True)
    for ep in (False, True)
    for js in (False, True)
]
