use std::fmt;

macro_rules! id_type {
    ($(#[$m:meta])* $name:ident) => {
        $(#[$m])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
        pub struct $name(pub usize);

        impl $name {
            pub fn index(self) -> usize {
                self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}", self.0)
            }
        }
    };
}

id_type!(
    /// A processing core. Core `i` owns receive queue `i`.
    CoreId
);
id_type!(
    /// A NIC receive queue and its ring buffer.
    QueueId
);
id_type!(
    /// Index of a flow within one simulation.
    FlowId
);
id_type!(ThreadId);

impl From<QueueId> for CoreId {
    fn from(q: QueueId) -> CoreId {
        CoreId(q.0)
    }
}

impl From<CoreId> for QueueId {
    fn from(c: CoreId) -> QueueId {
        QueueId(c.0)
    }
}
