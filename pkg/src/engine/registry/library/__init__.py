from .elementwise import Abs, Add, Divide, Exp, Log, Multiply, Negate, Relu, Scale, Sqrt, Subtract
from .reductions import ChannelMean, ChannelVar, MeanAll, SumAll
from .spatial import Conv2d, SoftmaxChannels, Upsample2x

ALL_PRIMITIVES = [
    Add(), Subtract(), Multiply(), Divide(), Scale(), Negate(),
    Sqrt(), Log(), Exp(), Abs(), Relu(),
    SumAll(), MeanAll(), ChannelMean(), ChannelVar(),
    Conv2d(), Upsample2x(), SoftmaxChannels(),
]

__all__ = ["ALL_PRIMITIVES"]
