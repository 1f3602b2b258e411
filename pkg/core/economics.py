"""
Device earnings: operational earnings for promised cpu and ram, traffic
earnings for promised bandwidth discounted by link latency, and the total
reward penalized by the gap between local and global accuracy.
"""
from dataclasses import dataclass

from core.exceptions import DomainValidationError, RangeError


@dataclass(frozen=True)
class RewardBreakdown:
    operational: float
    traffic: float
    penalty_factor: float
    total: float


def operational_earnings(cpu_promised, ram_promised, price_cpu, price_ram):
    for name, value in (('cpu_promised', cpu_promised), ('ram_promised', ram_promised),
                        ('price_cpu', price_cpu), ('price_ram', price_ram)):
        if value < 0:
            raise DomainValidationError(name, '{} must not be negative'.format(name))
    return cpu_promised * price_cpu + ram_promised * price_ram


def traffic_earnings(band_promised, price_band, scaled_latency):
    if not 0.0 <= scaled_latency <= 1.0:
        raise RangeError('scaled latency {} outside [0, 1]'.format(scaled_latency))
    if band_promised < 0 or price_band < 0:
        raise DomainValidationError('band_promised', 'bandwidth and its price must not be negative')
    return band_promised * price_band * (1.0 - scaled_latency)


def accuracy_gap_std(acc_device, acc_global):
    """
    population standard deviation of the pair {acc_device, acc_global}
    """
    for value in (acc_device, acc_global):
        if not 0.0 <= value <= 1.0:
            raise RangeError('accuracy {} outside [0, 1]'.format(value))
    return abs(acc_device - acc_global) / 2.0


def total_reward(operational, traffic, acc_device, acc_global):
    """
    reward of a device for one round, the accuracy gap shrinks earnings by at most half
    :param operational: operational earnings
    :param traffic: traffic earnings
    :param acc_device: local accuracy of the device
    :param acc_global: global accuracy of the server the device trains for
    :return: RewardBreakdown
    """
    if operational < 0 or traffic < 0:
        raise DomainValidationError('earnings', 'earnings must not be negative')
    penalty_factor = 1.0 - accuracy_gap_std(acc_device, acc_global)
    return RewardBreakdown(operational=operational, traffic=traffic, penalty_factor=penalty_factor,
                           total=(operational + traffic) * penalty_factor)


def device_reward(device, server, scaled_latency, acc_device, acc_global):
    """
    total reward of device when trained for server
    """
    return total_reward(
        operational_earnings(device.cpu_promised, device.ram_promised, server.price_cpu, server.price_ram),
        traffic_earnings(device.bandwidth_promised, server.price_band, scaled_latency),
        acc_device, acc_global,
    )
