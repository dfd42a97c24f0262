import numpy as np
import pytest

from voxelplan import EgoVehicle, FrenetState, LaneLabel, LaneModel, Scene


def straight_lanes(count=3, width=4.0, length=1000.0, speed_limit=20.0, current=None):
    if current is None:
        current = count // 2
    line = np.array([[0.0, 0.0], [length, 0.0]])
    return LaneModel(
        lane_count=count,
        lane_width=width,
        reference_line=line,
        speed_limit=speed_limit,
        current_index=current,
    )


def make_scene(lanes=None, ego_state=None, agents=(), ego_length=4.5, ego_width=2.0):
    lanes = lanes if lanes is not None else straight_lanes()
    ego_state = ego_state if ego_state is not None else FrenetState(50.0, 0.0, 10.0, 0.0)
    ego = EgoVehicle(state=ego_state, length=ego_length, width=ego_width)
    return Scene(lanes=lanes, ego=ego, agents=tuple(agents))


@pytest.fixture
def lanes3():
    return straight_lanes()


@pytest.fixture
def empty_scene(lanes3):
    return make_scene(lanes3)
