import enum

from POOLING_MODES import PoolingMode


class Scorer(enum.Enum):
    COSINE = "cosine"
    MAXSIM = "maxsim"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value

    @classmethod
    def has_value(cls, value):
        return any(value == item.value for item in cls)

    @classmethod
    def get_all_values(cls):
        return [item.value for item in cls]

    @classmethod
    def get(cls, value):
        if isinstance(value, cls):
            return value
        for item in cls:
            if value == item.value:
                return item
        raise ValueError(f"Scorer {value} is not supported (choose from {cls.get_all_values()})")

    @classmethod
    def for_mode(cls, mode) -> "Scorer":
        return cls.MAXSIM if PoolingMode.get(mode).multi_vector else cls.COSINE


## how to use these
# Scorer.get("maxsim")           -> Scorer.MAXSIM
# Scorer.for_mode("late_chunk")  -> Scorer.COSINE
