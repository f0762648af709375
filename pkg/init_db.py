"""
Ledger Initialization Script
Run this to create the local job ledger
"""

import os

from dotenv import load_dotenv

from database.db_manager import JobLedger

if __name__ == '__main__':
    load_dotenv()
    path = os.getenv('SWARM_LEDGER_PATH', 'swarm_ledger.db')
    print(f"Initializing job ledger at {path}...")
    JobLedger(path).init_db()
    print("Ledger setup complete!")
