import json
from datetime import datetime

from models.database import db


class ExperimentRun(db.Model):
    """One harness run and the files it wrote"""
    __tablename__ = 'experiment_runs'

    id = db.Column(db.Integer, primary_key=True)
    kind = db.Column(db.String(32), nullable=False)
    master_seed = db.Column(db.BigInteger, nullable=False)
    spec_json = db.Column(db.Text, nullable=False)
    manifest_path = db.Column(db.String(500), nullable=True)
    trials_csv = db.Column(db.String(500), nullable=True)
    summary_csv = db.Column(db.String(500), nullable=True)
    status = db.Column(db.String(20), default='running', nullable=False)
    failures = db.Column(db.Integer, default=0, nullable=False)
    created_at = db.Column(db.DateTime, default=datetime.utcnow)

    def __repr__(self):
        return f'<ExperimentRun {self.id} {self.kind} seed={self.master_seed}>'

    def to_dict(self):
        """Convert run to dictionary"""
        return {
            'id': self.id,
            'kind': self.kind,
            'master_seed': self.master_seed,
            'spec': json.loads(self.spec_json) if self.spec_json else None,
            'manifest_path': self.manifest_path,
            'trials_csv': self.trials_csv,
            'summary_csv': self.summary_csv,
            'status': self.status,
            'failures': self.failures,
            'created_at': self.created_at.isoformat() if self.created_at else None
        }
