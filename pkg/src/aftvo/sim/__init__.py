from .pose import Pose, euler_to_quat, quat_to_euler, relative_pose, relative_pose_batch
from .sensors import MeasurementStream, SensorSpec, random_outages, sample_sensor, stream_truth
from .streamio import dumps_stream, load_stream, loads_stream, save_stream
from .trajectory import Trajectory, generate_trajectory
