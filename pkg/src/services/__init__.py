"""Services layer - external integrations and business logic"""
