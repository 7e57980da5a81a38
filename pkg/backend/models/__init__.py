from sqlalchemy import BigInteger, Column, Integer, String, Text
from sqlalchemy.orm import declarative_base

Base = declarative_base()


class ForensicEventRecord(Base):
    """Forensic event row used by the SQL export and database persistence"""
    __tablename__ = "forensic_events"

    id = Column(Integer, primary_key=True, autoincrement=True)
    occurred_at = Column(BigInteger, nullable=False, index=True)
    emitter = Column(String, nullable=False, index=True)
    seq = Column(Integer, nullable=False)
    name = Column(String, nullable=False, index=True)
    duration_micros = Column(BigInteger, nullable=True)
    tier_id = Column(String, nullable=True)
    node_id = Column(String, nullable=True)
    properties = Column(Text, nullable=False, default="{}")
    context = Column(Text, nullable=True)

