import enum


class PoolingMode(enum.Enum):
    INDEPENDENT = "independent"
    LATE_CHUNK = "late_chunk"
    LATE_INTERACTION = "late_interaction"
    SLIDING_WINDOW = "sliding_window"

    def __str__(self):
        return self.value

    def __repr__(self):
        return self.value

    @property
    def multi_vector(self) -> bool:
        return self is PoolingMode.LATE_INTERACTION

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
        raise ValueError(f"Pooling mode {value} is not supported (choose from {cls.get_all_values()})")


class IndexKind(enum.Enum):
    SINGLE = "single"
    MULTI = "multi"
    BM25 = "bm25"

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
        raise ValueError(f"Index kind {value} is not supported (choose from {cls.get_all_values()})")

    @classmethod
    def for_mode(cls, mode: PoolingMode):
        return cls.MULTI if PoolingMode.get(mode).multi_vector else cls.SINGLE
